// Copyright 2026 mvdrsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Line-delimited run manifests, audited file access and a bounded worker
// pool with index-ordered results.

#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "mvdrsep/error.hpp"
#include "mvdrsep/signal_core.hpp"
#include "mvdrsep/wav_io.hpp"

namespace mvdrsep {

namespace fs = std::filesystem;

/// Records every file the pipeline opens for reading.
class FileAccessLog {
 public:
  void record(const fs::path &p) {
    std::lock_guard<std::mutex> lock(mutex_);
    reads_.push_back(fs::weakly_canonical(p).string());
  }

  std::vector<std::string> reads() const {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<std::string> out = reads_;
    std::sort(out.begin(), out.end());
    return out;
  }

  bool was_read(const fs::path &p) const {
    const std::string key = fs::weakly_canonical(p).string();
    std::lock_guard<std::mutex> lock(mutex_);
    return std::find(reads_.begin(), reads_.end(), key) != reads_.end();
  }

  void clear() {
    std::lock_guard<std::mutex> lock(mutex_);
    reads_.clear();
  }

 private:
  mutable std::mutex mutex_;
  std::vector<std::string> reads_;
};

/// Runs fn(i) for i in [0, n) on at most `threads` workers. If any call
/// throws, the exception of the lowest failing index is rethrown.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)> &fn) {
  require(threads >= 1, ErrorKind::config, "thread count must be >= 1");
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto count = static_cast<std::size_t>(threads);
  if (count == 1 || n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < std::min(count, n); ++k) pool.emplace_back(worker);
    for (auto &t : pool) t.join();
  }
  for (auto &e : errors)
    if (e) std::rethrow_exception(e);
}

/// Seed for work item `index` of a run seeded with `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index,
                                 std::uint32_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32), stream};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline void ensure_directory(const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec && fs::is_directory(dir), ErrorKind::config,
          "cannot create output directory " + dir.string());
  const fs::path probe = dir / ".mvdrsep-write-probe";
  {
    std::ofstream os(probe);
    require(static_cast<bool>(os), ErrorKind::config,
            "output directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

/// Per-utterance records; paths are stored relative to the manifest's directory.
struct RunManifest {
  std::vector<nlohmann::json> records;
  fs::path base_dir;

  std::size_t size() const { return records.size(); }

  fs::path resolve(const nlohmann::json &rec, const std::string &key) const {
    require(rec.contains(key) && rec.at(key).is_string(), ErrorKind::data,
            "record " + rec.value("id", std::string("?")) + " has no " + key);
    return base_dir / rec.at(key).get<std::string>();
  }

  /// Expresses `file` relative to the manifest directory.
  std::string relative(const fs::path &file) const {
    return fs::relative(fs::weakly_canonical(file), fs::weakly_canonical(base_dir))
        .generic_string();
  }

  /// Re-expresses every *_path field for a manifest living in `new_base`.
  RunManifest rebased(const fs::path &new_base) const {
    RunManifest out{records, new_base};
    for (auto &rec : out.records)
      for (auto &[key, value] : rec.items())
        if (key.size() > 5 && key.ends_with("_path") && value.is_string())
          value = out.relative(base_dir / value.get<std::string>());
    return out;
  }

  /// Unique ids and every referenced file present.
  void validate() const {
    std::set<std::string> ids;
    for (const auto &rec : records) {
      require(rec.contains("id") && rec.at("id").is_string(), ErrorKind::data,
              "manifest record without id");
      const auto id = rec.at("id").get<std::string>();
      require(ids.insert(id).second, ErrorKind::data, "duplicate manifest id " + id);
      for (const auto &[key, value] : rec.items())
        if (key.ends_with("_path") && value.is_string())
          require(fs::exists(base_dir / value.get<std::string>()), ErrorKind::data,
                  "missing file for " + id + "." + key + ": " + value.get<std::string>());
    }
  }
};

inline void write_jsonl(const fs::path &path, const std::vector<nlohmann::json> &lines) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), ErrorKind::config, "cannot write " + path.string());
  for (const auto &l : lines) os << l.dump() << '\n';
  require(static_cast<bool>(os), ErrorKind::data, "write failed: " + path.string());
}

inline std::vector<nlohmann::json> read_jsonl(const fs::path &path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), ErrorKind::data, "cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception &e) {
      fail(ErrorKind::data,
           path.string() + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
  }
  return out;
}

inline void write_manifest(const fs::path &path, const RunManifest &m) {
  write_jsonl(path, m.records);
}

inline RunManifest read_manifest(const fs::path &path) {
  RunManifest m{read_jsonl(path), path.parent_path()};
  if (m.base_dir.empty()) m.base_dir = ".";
  return m;
}

/// Reads a WAV file, recording the access when a log is attached.
inline MultichannelWaveform read_audio(const fs::path &path, FileAccessLog *log) {
  require(fs::exists(path), ErrorKind::data, "missing audio file " + path.string());
  if (log) log->record(path);
  return read_wav_file(path.string());
}

}  // namespace mvdrsep
