#pragma once

// Append-only JSONL metrics. Each row goes out in a single write() on an
// O_APPEND descriptor, so a killed run leaves complete lines behind.

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <string>

#include "json.hpp"

#include "fmirl/core/error.hpp"

namespace fmirl::harness {

class MetricsWriter {
 public:
  explicit MetricsWriter(const std::string& path, bool truncate = true) : path_(path) {
    const int flags = O_WRONLY | O_CREAT | O_APPEND | (truncate ? O_TRUNC : 0);
    fd_ = ::open(path.c_str(), flags, 0644);
    if (fd_ < 0) throw DataError("cannot open metrics file '" + path + "': " + std::strerror(errno));
  }
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(const MetricsWriter&) = delete;
  ~MetricsWriter() {
    if (fd_ >= 0) ::close(fd_);
  }

  void append(const nlohmann::json& row) {
    const std::string line = row.dump() + "\n";
    const ssize_t n = ::write(fd_, line.data(), line.size());
    if (n != static_cast<ssize_t>(line.size())) throw DataError("short write to metrics file '" + path_ + "'");
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  int fd_ = -1;
};

}  // namespace fmirl::harness
