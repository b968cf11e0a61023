#pragma once

#include <zlib.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace decisionbench::io {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Reads a whole file, transparently inflating gzip content. Plain text
// files pass through unchanged.
inline std::string read_maybe_gz(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw IoError("cannot open " + path.string());
  std::string out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  int err = 0;
  const char* msg = gzerror(f, &err);
  const bool failed = n < 0 || (err != Z_OK && err != Z_STREAM_END);
  std::string what = failed ? std::string(msg ? msg : "") : std::string();
  gzclose(f);
  if (failed) throw IoError("gzip decode failed for " + path.string() + ": " + what);
  return out;
}

inline void ensure_parent(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
}

// zlib's gzip writer stamps mtime 0, so equal payloads give equal bytes.
inline void write_gz(const std::filesystem::path& path, std::string_view data) {
  ensure_parent(path);
  gzFile f = gzopen(path.string().c_str(), "wb6");
  if (f == nullptr) throw IoError("cannot create " + path.string());
  std::size_t off = 0;
  while (off < data.size()) {
    const auto chunk = static_cast<unsigned>(std::min<std::size_t>(data.size() - off, 1u << 20));
    if (gzwrite(f, data.data() + off, chunk) != static_cast<int>(chunk)) {
      gzclose(f);
      throw IoError("gzip write failed for " + path.string());
    }
    off += chunk;
  }
  if (gzclose(f) != Z_OK) throw IoError("gzip close failed for " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, std::string_view data) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace decisionbench::io
