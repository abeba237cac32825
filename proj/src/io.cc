#include "lipread/io.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lipread/error.h"

namespace lipread {
namespace fs = std::filesystem;
namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_u32(const std::vector<uint8_t>& in, std::size_t offset) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(in[offset + i]) << (8 * i);
  return v;
}

std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_absolute()) return p;
  return (base / path).lexically_normal().string();
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string comment_block(const std::string& text) {
  std::string out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out += "# " + line + "\n";
  return out;
}

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + path);
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << content;
  if (!out) throw DataError("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

std::vector<uint8_t> encode_lrv1(const Lrv1Video& video) {
  const std::size_t n = static_cast<std::size_t>(video.frames) * video.height * video.width;
  if (video.pixels.size() != n) throw std::invalid_argument("encode_lrv1: pixel count does not match T*H*W");
  std::vector<uint8_t> out{'L', 'R', 'V', '1'};
  put_u32(out, video.frames);
  put_u32(out, video.height);
  put_u32(out, video.width);
  out.insert(out.end(), video.pixels.begin(), video.pixels.end());
  return out;
}

Lrv1Video decode_lrv1(const std::vector<uint8_t>& bytes, const std::string& origin) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), "LRV1", 4) != 0)
    throw DataError(origin + ": bad LRV1 magic");
  Lrv1Video v;
  v.frames = get_u32(bytes, 4);
  v.height = get_u32(bytes, 8);
  v.width = get_u32(bytes, 12);
  const uint64_t n = static_cast<uint64_t>(v.frames) * v.height * v.width;
  if (bytes.size() - 16 != n)
    throw DataError(origin + ": LRV1 payload has " + std::to_string(bytes.size() - 16) + " bytes, header says " +
                    std::to_string(n));
  v.pixels.assign(bytes.begin() + 16, bytes.end());
  return v;
}

Lrv1Video read_lrv1(const std::string& path) { return decode_lrv1(read_file_bytes(path), path); }

void write_lrv1(const std::string& path, const Lrv1Video& video) { write_file_bytes(path, encode_lrv1(video)); }

RoiClip to_clip(const Lrv1Video& video, double fps) {
  RoiClip clip(static_cast<int>(video.frames), static_cast<int>(video.height), static_cast<int>(video.width));
  clip.fps = fps;
  for (std::size_t i = 0; i < video.pixels.size(); ++i) clip.data[i] = video.pixels[i];
  return clip;
}

Lrv1Video to_lrv1(const RoiClip& clip) {
  Lrv1Video v;
  v.frames = static_cast<uint32_t>(clip.frames);
  v.height = static_cast<uint32_t>(clip.height);
  v.width = static_cast<uint32_t>(clip.width);
  v.pixels.resize(clip.data.size());
  for (std::size_t i = 0; i < clip.data.size(); ++i) {
    const double r = std::nearbyint(clip.data[i]);
    v.pixels[i] = static_cast<uint8_t>(r < 0.0 ? 0.0 : (r > 255.0 ? 255.0 : r));
  }
  return v;
}

std::vector<LandmarkFrame> read_landmarks_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open landmark file " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty landmark file");
  std::vector<LandmarkFrame> frames;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty()) continue;
    const auto fields = split(line, ',');
    if (fields.size() != 1 + 2 * kNumLandmarks)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(1 + 2 * kNumLandmarks) +
                      " fields, got " + std::to_string(fields.size()));
    LandmarkFrame f;
    for (int i = 0; i < kNumLandmarks; ++i) {
      try {
        f.points[static_cast<std::size_t>(i)].x = std::stod(fields[static_cast<std::size_t>(1 + 2 * i)]);
        f.points[static_cast<std::size_t>(i)].y = std::stod(fields[static_cast<std::size_t>(2 + 2 * i)]);
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(lineno) + ": malformed coordinate for point " + std::to_string(i));
      }
      if (!std::isfinite(f.points[static_cast<std::size_t>(i)].x) ||
          !std::isfinite(f.points[static_cast<std::size_t>(i)].y))
        throw DataError(path + ":" + std::to_string(lineno) + ": non-finite landmark");
    }
    frames.push_back(f);
  }
  return frames;
}

void write_landmarks_csv(const std::string& path, const std::vector<LandmarkFrame>& frames) {
  std::string out = "frame_index";
  for (int i = 0; i < kNumLandmarks; ++i) out += ",x" + std::to_string(i) + ",y" + std::to_string(i);
  out += '\n';
  char buf[64];
  for (std::size_t t = 0; t < frames.size(); ++t) {
    out += std::to_string(t);
    for (const auto& p : frames[t].points) {
      std::snprintf(buf, sizeof(buf), ",%.17g,%.17g", p.x, p.y);
      out += buf;
    }
    out += '\n';
  }
  write_text_file(path, out);
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path);
  const fs::path base = fs::path(path).parent_path();
  std::vector<ManifestEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 4)
      throw DataError(path + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    entries.push_back({fields[0], resolve(base, fields[1]), resolve(base, fields[2]), fields[3]});
  }
  return entries;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries,
                    const std::string& header_comment) {
  std::string out = comment_block(header_comment);
  for (const auto& e : entries)
    out += e.id + '\t' + e.frames_path + '\t' + e.landmarks_path + '\t' + e.transcript + '\n';
  write_text_file(path, out);
}

std::vector<std::pair<std::string, std::string>> read_text_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::vector<std::pair<std::string, std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    line = strip_cr(line);
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      rows.emplace_back(line, "");
    else
      rows.emplace_back(line.substr(0, tab), line.substr(tab + 1));
  }
  return rows;
}

void write_text_table(const std::string& path, const std::vector<std::pair<std::string, std::string>>& rows,
                      const std::string& header_comment) {
  std::string out = comment_block(header_comment);
  for (const auto& [id, text] : rows) out += id + '\t' + text + '\n';
  write_text_file(path, out);
}

}  // namespace lipread
