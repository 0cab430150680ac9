#include "bhrnet/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace bhrnet {

namespace {

using nlohmann::json;

const json& need(const json& j, const char* key, const char* where) {
  if (!j.is_object() || !j.contains(key)) {
    throw std::invalid_argument(std::string("config: missing field \"") + key + "\" in " + where);
  }
  return j.at(key);
}

int64_t need_int(const json& j, const char* key, const char* where) {
  const json& v = need(j, key, where);
  if (!v.is_number_integer()) {
    throw std::invalid_argument(std::string("config: field \"") + key + "\" in " + where +
                                " must be an integer");
  }
  return v.get<int64_t>();
}

std::string need_str(const json& j, const char* key, const char* where) {
  const json& v = need(j, key, where);
  if (!v.is_string()) {
    throw std::invalid_argument(std::string("config: field \"") + key + "\" in " + where +
                                " must be a string");
  }
  return v.get<std::string>();
}

}  // namespace

NetworkSpec parse_spec_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config: invalid JSON: ") + e.what());
  }
  NetworkSpec spec;
  spec.name = need_str(j, "name", "config");
  spec.width = need_int(j, "width", "config");
  spec.num_stages = static_cast<int>(need_int(j, "num_stages", "config"));

  const json& b = need(j, "block", "config");
  spec.block.variant = block_variant_from_string(need_str(b, "variant", "block"));
  spec.block.num_dw = static_cast<int>(need_int(b, "num_dw", "block"));
  spec.block.expansion = static_cast<int>(need_int(b, "expansion", "block"));

  const json& stages = need(j, "stages", "config");
  if (!stages.is_array()) throw std::invalid_argument("config: \"stages\" must be a list");
  for (const json& s : stages) {
    StageConfig sc;
    const json& ch = need(s, "channels", "stage");
    const json& nb = need(s, "num_blocks", "stage");
    if (!ch.is_array() || !nb.is_array()) {
      throw std::invalid_argument("config: stage channels/num_blocks must be lists");
    }
    for (const json& c : ch) {
      if (!c.is_number_integer()) throw std::invalid_argument("config: channels must be integers");
      sc.channels.push_back(c.get<int64_t>());
    }
    for (const json& n : nb) {
      if (!n.is_number_integer()) {
        throw std::invalid_argument("config: num_blocks must be integers");
      }
      sc.num_blocks.push_back(n.get<int>());
    }
    spec.stages.push_back(std::move(sc));
  }

  const json& h = need(j, "head", "config");
  spec.head.kind = head_kind_from_string(need_str(h, "kind", "head"));
  spec.head.num_keypoints = need_int(h, "num_keypoints", "head");

  if (j.contains("flip_pairs")) {
    const json& fp = j.at("flip_pairs");
    if (!fp.is_array()) throw std::invalid_argument("config: \"flip_pairs\" must be a list");
    for (const json& p : fp) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() ||
          !p[1].is_number_integer()) {
        throw std::invalid_argument("config: each flip pair must be [a, b]");
      }
      spec.flip_pairs.push_back({p[0].get<int64_t>(), p[1].get<int64_t>()});
    }
  }

  spec.validate();
  return spec;
}

std::string spec_to_json(const NetworkSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["width"] = spec.width;
  j["num_stages"] = spec.num_stages;
  j["block"] = {{"variant", to_string(spec.block.variant)},
                {"num_dw", spec.block.num_dw},
                {"expansion", spec.block.expansion}};
  j["stages"] = json::array();
  for (const StageConfig& sc : spec.stages) {
    j["stages"].push_back({{"channels", sc.channels}, {"num_blocks", sc.num_blocks}});
  }
  j["head"] = {{"kind", to_string(spec.head.kind)},
               {"num_keypoints", spec.head.num_keypoints}};
  if (!spec.flip_pairs.empty()) {
    json fp = json::array();
    for (const auto& p : spec.flip_pairs) fp.push_back({p[0], p[1]});
    j["flip_pairs"] = fp;
  }
  return j.dump(2) + "\n";
}

std::vector<std::string> builtin_config_names() { return {"hrnet-32", "bhrnet-32", "bhrnet-25"}; }

NetworkSpec resolve_config(const std::string& name_or_path) {
  namespace fs = std::filesystem;
  std::string path;
  if (fs::exists(name_or_path) && fs::is_regular_file(name_or_path)) {
    path = name_or_path;
  } else if (const char* dir = std::getenv("BHRNET_CONFIG_DIR")) {
    const fs::path candidate = fs::path(dir) / (name_or_path + ".json");
    if (fs::exists(candidate)) path = candidate.string();
  }
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("config: cannot read " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_spec_json(ss.str());
  }
  if (name_or_path == "hrnet-32") return hrnet_spec(32);
  if (name_or_path == "bhrnet-32") return bhrnet_spec(32);
  if (name_or_path == "bhrnet-25") return bhrnet_spec(25);
  throw std::invalid_argument("config: \"" + name_or_path +
                              "\" is neither a file, a $BHRNET_CONFIG_DIR entry, nor a builtin");
}

}  // namespace bhrnet
