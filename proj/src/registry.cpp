#include "soaheap/registry.hpp"

#include <algorithm>
#include <unordered_set>

namespace soaheap {

namespace {

constexpr std::uint32_t kHeaderBytes = 24;
constexpr std::uint32_t kForwardingBytes = 8 * kSlotsPerBlock;

std::uint64_t align_up(std::uint64_t v, std::uint64_t a) { return (v + a - 1) / a * a; }

bool valid_elem_size(std::uint32_t s) { return s == 1 || s == 2 || s == 4 || s == 8; }

}  // namespace

FieldDescriptor FieldDescriptor::scalar(std::string name, std::uint32_t size) {
  FieldDescriptor f;
  f.name = std::move(name);
  f.kind = FieldKind::scalar;
  f.elem_size = size;
  return f;
}

FieldDescriptor FieldDescriptor::reference(std::string name, std::string target, std::uint32_t length) {
  FieldDescriptor f;
  f.name = std::move(name);
  f.kind = FieldKind::reference;
  f.elem_size = 8;
  f.length = length;
  f.target_name = std::move(target);
  return f;
}

FieldDescriptor FieldDescriptor::array(std::string name, std::uint32_t elem_size, std::uint32_t length) {
  FieldDescriptor f;
  f.name = std::move(name);
  f.kind = FieldKind::array;
  f.elem_size = elem_size;
  f.length = length;
  return f;
}

std::uint32_t capacity_for(std::uint32_t object_size, std::uint32_t smallest_size) {
  return static_cast<std::uint32_t>(std::uint64_t{kSlotsPerBlock} * smallest_size / object_size);
}

TypeId Registry::register_type(std::string name, std::optional<TypeId> supertype, bool is_abstract,
                               std::vector<FieldDescriptor> fields) {
  if (frozen_) throw RegistryError("registry is frozen");
  if (types_.size() >= kMaxTypes) throw RegistryError("too many types (max 255)");
  if (name.empty()) throw RegistryError("type name must not be empty");
  if (find(name)) throw RegistryError("duplicate type name: " + name);
  if (supertype) check_id(*supertype);
  for (const auto& f : fields) {
    if (!valid_elem_size(f.elem_size)) throw RegistryError("field " + f.name + ": element size must be 1, 2, 4 or 8");
    if (f.length == 0) throw RegistryError("field " + f.name + ": length must be positive");
    if (f.kind == FieldKind::reference && (f.elem_size != 8 || f.target_name.empty()))
      throw RegistryError("field " + f.name + ": reference fields are 8-byte handles with a target");
    if (f.kind == FieldKind::scalar && f.length != 1) throw RegistryError("field " + f.name + ": scalar with length");
  }

  TypeDescriptor t;
  t.id = static_cast<TypeId>(types_.size() + 1);
  t.name = std::move(name);
  t.supertype = supertype;
  t.is_abstract = is_abstract;
  if (supertype) t.fields = type(*supertype).fields;
  for (auto& f : fields) t.fields.push_back(std::move(f));
  if (!is_abstract && t.fields.empty()) throw RegistryError("concrete type " + t.name + " has no fields");
  for (const auto& f : t.fields) t.object_size += f.size();
  types_.push_back(std::move(t));
  return types_.back().id;
}

const LayoutPlan& Registry::freeze(std::uint64_t heap_size) {
  if (frozen_) throw RegistryError("registry is already frozen");
  if (heap_size == 0 || heap_size % kSlotsPerBlock != 0)
    throw RegistryError("heap size must be a positive multiple of 64");

  const TypeDescriptor* smallest = nullptr;
  for (const auto& t : types_)
    if (!t.is_abstract && (!smallest || t.object_size < smallest->object_size)) smallest = &t;
  if (!smallest) throw RegistryError("no concrete types registered");

  for (auto& t : types_) {
    for (auto& f : t.fields) {
      if (f.kind != FieldKind::reference) continue;
      auto target = find(f.target_name);
      if (!target)
        throw RegistryError("field " + f.name + " of " + t.name + " references unknown type " + f.target_name);
      f.target = *target;
    }
  }

  std::uint32_t segment = std::max<std::uint32_t>(kForwardingBytes, kSlotsPerBlock * smallest->object_size);
  for (auto& t : types_) {
    if (t.is_abstract) continue;
    t.block_capacity = capacity_for(t.object_size, smallest->object_size);
    if (t.block_capacity == 0) throw RegistryError("type " + t.name + " is larger than 64 times the smallest type");
    t.field_offsets.clear();
    for (std::uint32_t f = 0; f < t.fields.size(); ++f)
      t.field_offsets.push_back(static_cast<std::uint32_t>(field_location(t.id, f, t.block_capacity, 0)));
    t.segment_bytes = static_cast<std::uint32_t>(segment_size(t.id, t.block_capacity));
    segment = std::max(segment, t.segment_bytes);
  }
  segment = static_cast<std::uint32_t>(align_up(segment, 8));

  plan_.heap_size = heap_size;
  plan_.num_blocks = heap_size / kSlotsPerBlock;
  plan_.smallest_type = smallest->id;
  plan_.smallest_size = smallest->object_size;
  plan_.segment_bytes = segment;
  plan_.header_bytes = kHeaderBytes;
  plan_.block_bytes = kHeaderBytes + segment;
  frozen_ = true;
  return plan_;
}

const LayoutPlan& Registry::layout() const {
  if (!frozen_) throw RegistryError("registry is not frozen");
  return plan_;
}

const TypeDescriptor& Registry::type(TypeId id) const {
  check_id(id);
  return types_[id - 1];
}

std::optional<TypeId> Registry::find(std::string_view name) const {
  for (const auto& t : types_)
    if (t.name == name) return t.id;
  return std::nullopt;
}

TypeId Registry::id_of(std::string_view name) const {
  auto id = find(name);
  if (!id) throw RegistryError("unknown type: " + std::string(name));
  return *id;
}

void Registry::check_id(TypeId id) const {
  if (id == kNoType || id > types_.size()) throw RegistryError("unknown type id " + std::to_string(id));
}

std::size_t Registry::field_location(TypeId id, std::uint32_t field_index, std::uint32_t capacity,
                                     std::uint32_t slot) const {
  const auto& fields = type(id).fields;
  std::uint64_t offset = 0;
  for (std::uint32_t f = 0; f < field_index; ++f) {
    offset = align_up(offset, fields[f].elem_size);
    offset += std::uint64_t{capacity} * fields[f].size();
  }
  offset = align_up(offset, fields[field_index].elem_size);
  return offset + std::uint64_t{slot} * fields[field_index].size();
}

std::size_t Registry::segment_size(TypeId id, std::uint32_t capacity) const {
  const auto& fields = type(id).fields;
  if (fields.empty()) return 0;
  auto last = static_cast<std::uint32_t>(fields.size() - 1);
  return field_location(id, last, capacity, 0) + std::size_t{capacity} * fields[last].size();
}

bool Registry::is_subtype(TypeId a, TypeId b) const {
  check_id(a);
  check_id(b);
  std::optional<TypeId> cur = a;
  while (cur) {
    if (*cur == b) return true;
    cur = types_[*cur - 1].supertype;
  }
  return false;
}

std::vector<FieldRef> Registry::reference_bearing_scan_set(TypeId target) const {
  if (!frozen_) throw RegistryError("registry is not frozen");
  check_id(target);
  std::vector<FieldRef> out;
  for (const auto& t : types_) {
    if (t.is_abstract) continue;
    for (std::uint32_t f = 0; f < t.fields.size(); ++f) {
      const auto& fd = t.fields[f];
      if (fd.kind == FieldKind::reference && is_subtype(target, fd.target)) out.push_back({t.id, f});
    }
  }
  return out;
}

std::vector<TypeId> Registry::concrete_types() const {
  std::vector<TypeId> out;
  for (const auto& t : types_)
    if (!t.is_abstract) out.push_back(t.id);
  return out;
}

std::vector<TypeId> Registry::concrete_subtypes(TypeId id) const {
  std::vector<TypeId> out;
  for (const auto& t : types_)
    if (!t.is_abstract && is_subtype(t.id, id)) out.push_back(t.id);
  return out;
}

}  // namespace soaheap
