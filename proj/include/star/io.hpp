#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "star/errors.hpp"
#include "star/similarity.hpp"

namespace star::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string digest(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, std::string_view text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::string file_digest(const fs::path& path) { return digest(read_text(path)); }

inline void require_file(const fs::path& path, std::string_view produced_by) {
  if (!fs::exists(path))
    throw IoError("missing upstream artifact " + path.string() + " (run '" + std::string(produced_by) + "' first)");
}

inline json read_json(const fs::path& path) {
  auto text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw IngestError(path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& value) { write_text(path, value.dump(2) + "\n"); }

inline std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw IngestError(path.string() + ": " + e.what(), line_no);
    }
  }
  return out;
}

inline void write_jsonl(const fs::path& path, const std::vector<json>& records) {
  std::string text;
  for (const auto& r : records) {
    text += r.dump();
    text += '\n';
  }
  write_text(path, text);
}

}  // namespace star::io
