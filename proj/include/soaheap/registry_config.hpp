#pragma once

#include <string>

#include "soaheap/registry.hpp"

namespace soaheap {

// Declarative type list, e.g.
//   {"types": [
//     {"name": "Agent", "abstract": true,
//      "fields": [{"name": "position", "kind": "reference", "target": "Cell"}]},
//     {"name": "Fish", "super": "Agent", "fields": [{"name": "timer", "size": 4}]},
//     {"name": "Cell", "fields": [{"name": "flags", "kind": "array", "size": 1, "length": 5}]}]}
// Field kind defaults to "scalar"; reference fields default to length 1.
void load_registry_json(Registry& registry, const std::string& json_text);
void load_registry_file(Registry& registry, const std::string& path);

}  // namespace soaheap
