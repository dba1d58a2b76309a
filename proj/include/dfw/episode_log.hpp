#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "dfw/core.hpp"
#include "dfw/json_io.hpp"

namespace dfw {

struct log_read_result {
  std::vector<episode> episodes;
  bool torn_tail = false;  // last line had no newline and did not parse
};

// Reads a JSON Lines episode log. A final line without a trailing newline is
// a torn write from a crash and is ignored; any other bad line is an error.
inline log_read_result read_episode_log(const std::string& path) {
  log_read_result out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < content.size()) {
    const auto nl = content.find('\n', pos);
    const bool terminated = nl != std::string::npos;
    std::string line = content.substr(pos, terminated ? nl - pos : std::string::npos);
    pos = terminated ? nl + 1 : content.size();
    ++line_no;
    if (line.empty()) continue;
    try {
      out.episodes.push_back(json::parse(line).get<episode>());
    } catch (const std::exception& e) {
      if (!terminated) {
        out.torn_tail = true;
        break;
      }
      throw error(path + ":" + std::to_string(line_no) + ": bad episode record: " + e.what());
    }
  }
  return out;
}

// Append-only writer; one record per line, flushed per append. Opening an
// existing log cuts off a torn final line first.
class episode_log {
 public:
  episode_log() = default;
  explicit episode_log(const std::string& path) { open(path); }

  void open(const std::string& path) {
    std::lock_guard lock(mu_);
    path_ = path;
    if (std::filesystem::exists(path)) {
      std::ifstream in(path, std::ios::binary);
      std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      if (!content.empty() && content.back() != '\n') {
        const auto nl = content.rfind('\n');
        std::filesystem::resize_file(path, nl == std::string::npos ? 0 : nl + 1);
      }
    } else if (auto dir = std::filesystem::path(path).parent_path(); !dir.empty()) {
      std::filesystem::create_directories(dir);
    }
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw error("cannot open episode log '" + path + "'");
  }

  bool is_open() const { return out_.is_open(); }
  const std::string& path() const { return path_; }

  void append(const episode& ep) {
    const std::string line = json(ep).dump() + "\n";
    std::lock_guard lock(mu_);
    if (!out_.is_open()) throw error("episode log not open");
    out_.write(line.data(), static_cast<std::streamsize>(line.size()));
    out_.flush();
    if (!out_) throw error("episode log write failed");
    ++appended_;
  }

  std::size_t appended() const {
    std::lock_guard lock(mu_);
    return appended_;
  }

 private:
  mutable std::mutex mu_;
  std::ofstream out_;
  std::string path_;
  std::size_t appended_ = 0;
};

}  // namespace dfw
