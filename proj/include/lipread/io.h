#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lipread/roi.h"

namespace lipread {

// "LRV1" container: magic, then T, H, W as u32 little-endian, then T*H*W
// bytes of 8-bit grayscale, row-major, frame-major.
struct Lrv1Video {
  uint32_t frames = 0;
  uint32_t height = 0;
  uint32_t width = 0;
  std::vector<uint8_t> pixels;
};

std::vector<uint8_t> encode_lrv1(const Lrv1Video& video);
Lrv1Video decode_lrv1(const std::vector<uint8_t>& bytes, const std::string& origin = "<memory>");
Lrv1Video read_lrv1(const std::string& path);
void write_lrv1(const std::string& path, const Lrv1Video& video);

RoiClip to_clip(const Lrv1Video& video, double fps = 25.0);
// Rounds to nearest and clamps to [0, 255].
Lrv1Video to_lrv1(const RoiClip& clip);

// Landmark CSV: header row, then frame_index,x0,y0,...,x67,y67 per frame.
std::vector<LandmarkFrame> read_landmarks_csv(const std::string& path);
void write_landmarks_csv(const std::string& path, const std::vector<LandmarkFrame>& frames);

// Manifest TSV: utterance_id, frames_path, landmarks_path, transcript.
// Lines starting with '#' are comments. Relative paths are resolved against
// the manifest's directory on read.
struct ManifestEntry {
  std::string id;
  std::string frames_path;
  std::string landmarks_path;
  std::string transcript;
};

std::vector<ManifestEntry> read_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries,
                    const std::string& header_comment = "");

// "utterance_id<TAB>text" per line; '#' lines are comments.
std::vector<std::pair<std::string, std::string>> read_text_table(const std::string& path);
void write_text_table(const std::string& path, const std::vector<std::pair<std::string, std::string>>& rows,
                      const std::string& header_comment = "");

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Splits on a single character, keeping empty fields.
std::vector<std::string> split(const std::string& line, char sep);

// Prefixes every line of `text` with "# ".
std::string comment_block(const std::string& text);

}  // namespace lipread
