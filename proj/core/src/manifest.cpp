#include "curritune/manifest.hpp"

#include <json.hpp>

namespace curritune {

void Manifest::add_option(std::string name, std::string value) {
  options.emplace_back(std::move(name), std::move(value));
}

void Manifest::add_seed(std::string name, std::uint64_t value) {
  seeds.emplace_back(std::move(name), std::to_string(value));
}

void Manifest::add_input(const std::filesystem::path& path) {
  inputs.emplace_back(path.string(), file_digest(path));
}

void Manifest::add_output(const std::filesystem::path& path) {
  outputs.emplace_back(path.string(), file_digest(path));
}

std::string Manifest::to_json() const {
  nlohmann::ordered_json obj;
  obj["kind"] = "curritune-manifest";
  obj["version"] = 1;
  obj["tool_version"] = tool_version;
  obj["command"] = command;
  auto as_object = [](const std::vector<std::pair<std::string, std::string>>& pairs) {
    nlohmann::ordered_json o = nlohmann::ordered_json::object();
    for (const auto& [k, v] : pairs) {
      o[k] = v;
    }
    return o;
  };
  obj["options"] = as_object(options);
  obj["seeds"] = as_object(seeds);
  obj["inputs"] = as_object(inputs);
  obj["outputs"] = as_object(outputs);
  return obj.dump(2) + "\n";
}

void Manifest::save_into(const std::filesystem::path& dir) const {
  write_text_file(dir / "manifest.json", to_json());
}

}  // namespace curritune
