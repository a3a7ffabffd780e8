#include "soaheap/registry_config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

namespace soaheap {

void load_registry_json(Registry& registry, const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw RegistryError(std::string("type config: ") + e.what());
  }
  if (!doc.contains("types") || !doc["types"].is_array()) throw RegistryError("type config: missing \"types\" array");

  try {
    for (const auto& t : doc["types"]) {
      auto name = t.at("name").get<std::string>();
      std::optional<TypeId> super;
      if (t.contains("super")) super = registry.id_of(t["super"].get<std::string>());
      bool is_abstract = t.value("abstract", false);

      std::vector<FieldDescriptor> fields;
      for (const auto& f : t.value("fields", nlohmann::json::array())) {
        auto fname = f.at("name").get<std::string>();
        auto kind = f.value("kind", std::string("scalar"));
        if (kind == "scalar") {
          fields.push_back(FieldDescriptor::scalar(fname, f.at("size").get<std::uint32_t>()));
        } else if (kind == "reference") {
          fields.push_back(FieldDescriptor::reference(fname, f.at("target").get<std::string>(), f.value("length", 1u)));
        } else if (kind == "array") {
          fields.push_back(
              FieldDescriptor::array(fname, f.at("size").get<std::uint32_t>(), f.at("length").get<std::uint32_t>()));
        } else {
          throw RegistryError("type config: unknown field kind " + kind);
        }
      }
      registry.register_type(name, super, is_abstract, std::move(fields));
    }
  } catch (const nlohmann::json::exception& e) {
    throw RegistryError(std::string("type config: ") + e.what());
  }
}

void load_registry_file(Registry& registry, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RegistryError("cannot open type config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  load_registry_json(registry, ss.str());
}

}  // namespace soaheap
