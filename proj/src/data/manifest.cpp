#include <fstream>
#include <json.hpp>
#include <string>

#include "layeragg/data.hpp"

namespace layeragg {

namespace {

using nlohmann::json;

int label_value(const json& v, std::size_t line) {
  if (!v.is_number_integer() || v.get<long long>() < 0 ||
      v.get<long long>() > std::numeric_limits<int>::max()) {
    throw ParseError("labels must be non-negative integers", line);
  }
  return v.get<int>();
}

ManifestRecord parse_record(const std::string& text, std::size_t line) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what(), line);
  }
  if (!j.is_object()) throw ParseError("record must be a JSON object", line);
  for (const auto& [key, _] : j.items()) {
    if (key != "feature_path" && key != "utt_label" && key != "frame_labels") {
      throw ParseError("unknown field '" + key + "'", line);
    }
  }
  if (!j.contains("feature_path") || !j["feature_path"].is_string()) {
    throw ParseError("missing string field feature_path", line);
  }
  ManifestRecord r;
  r.feature_path = j["feature_path"].get<std::string>();
  const bool has_utt = j.contains("utt_label") && !j["utt_label"].is_null();
  const bool has_frames = j.contains("frame_labels") && !j["frame_labels"].is_null();
  if (has_utt == has_frames) {
    throw ParseError("record needs exactly one of utt_label / frame_labels", line);
  }
  if (has_utt) {
    r.utt_label = label_value(j["utt_label"], line);
  } else {
    if (!j["frame_labels"].is_array()) throw ParseError("frame_labels must be an array", line);
    std::vector<int> labels;
    for (const auto& v : j["frame_labels"]) labels.push_back(label_value(v, line));
    r.frame_labels = std::move(labels);
  }
  return r;
}

}  // namespace

std::filesystem::path DatasetManifest::resolve(const ManifestRecord& r) const {
  std::filesystem::path p(r.feature_path);
  return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();

  std::string text;
  std::size_t line = 0;
  std::optional<LifHeader> first;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    ManifestRecord r = parse_record(text, line);
    const LifHeader h = read_lif_header(m.resolve(r));
    if (!first) {
      first = h;
    } else if (h.layers != first->layers || h.dim != first->dim) {
      throw DataError("manifest " + path.string() + " line " + std::to_string(line) +
                      ": feature dims (L=" + std::to_string(h.layers) +
                      ", D=" + std::to_string(h.dim) + ") differ from the first record (L=" +
                      std::to_string(first->layers) + ", D=" + std::to_string(first->dim) + ")");
    }
    if (r.frame_labels && r.frame_labels->size() != h.frames) {
      throw DataError("manifest " + path.string() + " line " + std::to_string(line) + ": " +
                      std::to_string(r.frame_labels->size()) + " frame labels for T=" +
                      std::to_string(h.frames));
    }
    m.records.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open manifest " + path.string() + " for writing");
  for (const auto& r : manifest.records) {
    json j;
    j["feature_path"] = r.feature_path;
    if (r.utt_label) j["utt_label"] = *r.utt_label;
    if (r.frame_labels) j["frame_labels"] = *r.frame_labels;
    out << j.dump() << '\n';
  }
  if (!out) throw DataError("write failed for manifest " + path.string());
}

}  // namespace layeragg
