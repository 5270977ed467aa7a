#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "layeragg/trainer.hpp"

namespace layeragg {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'L', 'I', 'M', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : bytes_(bytes), origin_(std::move(origin)) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(origin_ + ": truncated " + what + " (need " + std::to_string(n) +
                        " bytes, have " + std::to_string(bytes_.size() - pos_) + ")");
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  double f64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string text(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& origin() const { return origin_; }

 private:
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

json tensor_entries(const std::vector<NamedTensor>& ts) {
  json out = json::array();
  for (const auto& t : ts) out.push_back({{"name", t.name}, {"shape", t.value.shape()}});
  return out;
}

// Checks that a declaration list in the blob matches the freshly built layout.
void match_layout(const json& declared, const std::vector<NamedTensor>& built, const std::string& origin,
                  const char* group) {
  if (!declared.is_array() || declared.size() != built.size()) {
    throw FormatError(origin + ": " + group + " tensor list does not match the config");
  }
  for (std::size_t i = 0; i < built.size(); ++i) {
    if (declared[i].at("name").get<std::string>() != built[i].name ||
        declared[i].at("shape").get<Shape>() != built[i].value.shape()) {
      throw FormatError(origin + ": " + group + " tensor " + std::to_string(i) +
                        " does not match the config");
    }
  }
}

Index get_index(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_number_integer()) {
    throw ConfigError(std::string("interface spec: missing integer field ") + key);
  }
  return j[key].get<Index>();
}

}  // namespace

json spec_to_json(const InterfaceSpec& spec) {
  json j{{"kind", std::string(kind_name(kind_of(spec)))}};
  std::visit(
      [&](const auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, WeightedSumSpec>) {
          j["normalize"] = s.normalize == Normalize::Softmax ? "softmax" : "raw";
        } else if constexpr (std::is_same_v<S, GroupedWsSpec>) {
          j["groups"] = s.num_groups;
        } else if constexpr (std::is_same_v<S, ClsPoolSpec>) {
          j["heads"] = s.heads;
          j["ffn"] = s.ffn_dim ? json(*s.ffn_dim) : json(nullptr);
          j["ln_eps"] = s.ln_eps;
        } else if constexpr (std::is_same_v<S, PcaConcatSpec>) {
          j["components"] = s.components ? json(*s.components) : json(nullptr);
        }
      },
      spec);
  return j;
}

InterfaceSpec spec_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    throw ConfigError("interface spec: missing kind");
  }
  InterfaceSpec spec = default_spec(parse_kind(j["kind"].get<std::string>()));
  std::visit(
      [&](auto& s) {
        using S = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<S, WeightedSumSpec>) {
          const std::string n = j.value("normalize", std::string("softmax"));
          if (n != "softmax" && n != "raw") throw ConfigError("interface spec: bad normalize '" + n + "'");
          s.normalize = n == "softmax" ? Normalize::Softmax : Normalize::Raw;
        } else if constexpr (std::is_same_v<S, GroupedWsSpec>) {
          s.num_groups = get_index(j, "groups");
        } else if constexpr (std::is_same_v<S, ClsPoolSpec>) {
          s.heads = get_index(j, "heads");
          if (j.contains("ffn") && !j["ffn"].is_null()) s.ffn_dim = get_index(j, "ffn");
          if (j.contains("ln_eps")) s.ln_eps = j["ln_eps"].get<double>();
        } else if constexpr (std::is_same_v<S, PcaConcatSpec>) {
          if (j.contains("components") && !j["components"].is_null()) {
            s.components = get_index(j, "components");
          }
        }
      },
      spec);
  return spec;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  const InterfaceParams& ip = model.interface;
  const HeadSpec& hs = model.head.spec;
  const json config{
      {"interface", spec_to_json(ip.spec)},
      {"layers", ip.layers},
      {"dim", ip.dim},
      {"fitted", ip.fitted},
      {"head",
       {{"kind", std::string(head_kind_name(hs.kind))},
        {"input_dim", hs.input_dim},
        {"classes", hs.num_classes},
        {"hidden", hs.hidden}}},
      {"tensors",
       {{"interface", tensor_entries(ip.trainable)},
        {"buffers", tensor_entries(ip.buffers)},
        {"head", tensor_entries(model.head.trainable)}}},
  };
  const std::string blob = config.dump();

  std::string out(kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(blob.size()));
  out += blob;
  for (const auto* group : {&ip.trainable, &ip.buffers, &model.head.trainable}) {
    for (const auto& t : *group) {
      for (Index i = 0; i < t.value.size(); ++i) put_f64(out, t.value[i]);
    }
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open model bundle " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(bytes, path.string());

  if (r.text(4, "magic") != std::string(kMagic, 4)) throw FormatError(path.string() + ": bad magic");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  }
  const std::uint32_t blob_size = r.u32("config length");
  json config;
  try {
    config = json::parse(r.text(blob_size, "config"));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed config: " + e.what());
  }

  Model model;
  try {
    const InterfaceSpec spec = spec_from_json(config.at("interface"));
    const Index layers = config.at("layers").get<Index>();
    const Index dim = config.at("dim").get<Index>();
    validate(spec, layers, dim);
    Prng scratch(0);
    model.interface = init_params(spec, layers, dim, scratch);
    const json& h = config.at("head");
    const HeadSpec hs{parse_head_kind(h.at("kind").get<std::string>()), h.at("input_dim").get<Index>(),
                      h.at("classes").get<Index>(), h.at("hidden").get<Index>()};
    model.head = init_head(hs, scratch);
    const json& tensors = config.at("tensors");
    match_layout(tensors.at("interface"), model.interface.trainable, r.origin(), "interface");
    match_layout(tensors.at("buffers"), model.interface.buffers, r.origin(), "buffer");
    match_layout(tensors.at("head"), model.head.trainable, r.origin(), "head");
    model.interface.fitted = config.at("fitted").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad config: " + e.what());
  }

  Index total = 0;
  for (const auto* group : {&model.interface.trainable, &model.interface.buffers, &model.head.trainable}) {
    for (const auto& t : *group) total += t.value.size();
  }
  r.need(static_cast<std::size_t>(total) * 8, "tensor payload");
  for (auto* group : {&model.interface.trainable, &model.interface.buffers, &model.head.trainable}) {
    for (auto& t : *group) {
      for (Index i = 0; i < t.value.size(); ++i) t.value[i] = r.f64();
    }
  }
  if (r.remaining() != 0) {
    throw FormatError(path.string() + ": " + std::to_string(r.remaining()) + " trailing bytes");
  }
  model.interface.touch();
  return model;
}

}  // namespace layeragg
