// Copyright 2026 The progrun Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#if defined(PROGRUN_HAVE_BZ2)
#if __has_include(<bzlib.h>)
#include <bzlib.h>
#else
// Only the runtime library is installed on some systems; these are the
// stable libbz2 1.0 entry points.
extern "C" {
typedef struct {
  char* next_in;
  unsigned int avail_in;
  unsigned int total_in_lo32;
  unsigned int total_in_hi32;
  char* next_out;
  unsigned int avail_out;
  unsigned int total_out_lo32;
  unsigned int total_out_hi32;
  void* state;
  void* (*bzalloc)(void*, int, int);
  void (*bzfree)(void*, void*);
  void* opaque;
} bz_stream;
int BZ2_bzDecompressInit(bz_stream* strm, int verbosity, int small);
int BZ2_bzDecompress(bz_stream* strm);
int BZ2_bzDecompressEnd(bz_stream* strm);
}
#define BZ_OK 0
#define BZ_STREAM_END 4
#endif
#endif

namespace progrun {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sequential byte reader over a possibly compressed file.
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  // Returns 0 at end of input.
  virtual std::size_t read(char* buf, std::size_t n) = 0;
  // Compressed bytes consumed so far.
  virtual std::uint64_t offset() const = 0;
};

// Plain and gzip files; zlib reads uncompressed files transparently.
class GzSource : public ByteSource {
 public:
  explicit GzSource(const std::string& path) : path_(path) {
    file_ = gzopen(path.c_str(), "rb");
    if (!file_) throw IoError("cannot open '" + path + "': " + std::strerror(errno));
    gzbuffer(file_, 1 << 17);
  }
  ~GzSource() override {
    if (file_) gzclose(file_);
  }

  std::size_t read(char* buf, std::size_t n) override {
    int r = gzread(file_, buf, static_cast<unsigned>(n));
    if (r < 0) {
      int err = 0;
      const char* msg = gzerror(file_, &err);
      throw IoError("read error in '" + path_ + "': " + (msg ? msg : "?"));
    }
    return static_cast<std::size_t>(r);
  }

  std::uint64_t offset() const override { return static_cast<std::uint64_t>(gzoffset(file_)); }

 private:
  std::string path_;
  gzFile file_ = nullptr;
};

#if defined(PROGRUN_HAVE_BZ2)
class Bz2Source : public ByteSource {
 public:
  explicit Bz2Source(const std::string& path) : path_(path), in_(1 << 16) {
    file_ = std::fopen(path.c_str(), "rb");
    if (!file_) throw IoError("cannot open '" + path + "': " + std::strerror(errno));
    init();
  }
  ~Bz2Source() override {
    if (live_) BZ2_bzDecompressEnd(&strm_);
    if (file_) std::fclose(file_);
  }

  std::size_t read(char* buf, std::size_t n) override {
    strm_.next_out = buf;
    strm_.avail_out = static_cast<unsigned>(n);
    while (strm_.avail_out == n) {
      if (strm_.avail_in == 0) {
        std::size_t got = std::fread(in_.data(), 1, in_.size(), file_);
        if (got == 0) {
          if (std::ferror(file_)) throw IoError("read error in '" + path_ + "'");
          break;
        }
        consumed_ += got;
        strm_.next_in = in_.data();
        strm_.avail_in = static_cast<unsigned>(got);
      }
      int rc = BZ2_bzDecompress(&strm_);
      if (rc == BZ_STREAM_END) {
        // Concatenated streams (pbzip2 output) continue after the end mark.
        char* rest = strm_.next_in;
        unsigned avail = strm_.avail_in;
        char* out = strm_.next_out;
        unsigned out_avail = strm_.avail_out;
        BZ2_bzDecompressEnd(&strm_);
        live_ = false;
        init();
        strm_.next_in = rest;
        strm_.avail_in = avail;
        strm_.next_out = out;
        strm_.avail_out = out_avail;
      } else if (rc != BZ_OK) {
        throw IoError("corrupt bz2 data in '" + path_ + "' (code " + std::to_string(rc) + ")");
      }
    }
    return n - strm_.avail_out;
  }

  std::uint64_t offset() const override { return consumed_ - strm_.avail_in; }

 private:
  void init() {
    std::memset(&strm_, 0, sizeof strm_);
    if (BZ2_bzDecompressInit(&strm_, 0, 0) != BZ_OK) throw IoError("bz2 init failed for '" + path_ + "'");
    live_ = true;
  }

  std::string path_;
  std::FILE* file_ = nullptr;
  std::vector<char> in_;
  bz_stream strm_{};
  bool live_ = false;
  std::uint64_t consumed_ = 0;
};
#endif

inline bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Picks the decoder by extension.
inline std::unique_ptr<ByteSource> open_source(const std::string& path) {
  if (ends_with(path, ".bz2")) {
#if defined(PROGRUN_HAVE_BZ2)
    return std::make_unique<Bz2Source>(path);
#else
    throw IoError("bz2 support not compiled in: '" + path + "'");
#endif
  }
  return std::make_unique<GzSource>(path);
}

}  // namespace progrun
