#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace soaheap {

using TypeId = std::uint8_t;
inline constexpr TypeId kNoType = 0;
inline constexpr std::size_t kMaxTypes = 255;
inline constexpr std::uint32_t kSlotsPerBlock = 64;

class RegistryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FieldKind : std::uint8_t { scalar, reference, array };

// A reference field stores one handle (8 bytes) per element. Its target is
// named rather than numbered so that mutually referencing types can be
// declared in any order; the name is resolved at freeze().
struct FieldDescriptor {
  std::string name;
  FieldKind kind = FieldKind::scalar;
  std::uint32_t elem_size = 4;
  std::uint32_t length = 1;
  std::string target_name;
  TypeId target = kNoType;

  std::uint32_t size() const { return elem_size * length; }

  static FieldDescriptor scalar(std::string name, std::uint32_t size);
  static FieldDescriptor reference(std::string name, std::string target, std::uint32_t length = 1);
  static FieldDescriptor array(std::string name, std::uint32_t elem_size, std::uint32_t length);
};

struct TypeDescriptor {
  TypeId id = kNoType;
  std::string name;
  std::optional<TypeId> supertype;
  bool is_abstract = false;
  // Inherited fields first, then the fields introduced by this type.
  std::vector<FieldDescriptor> fields;
  std::uint32_t object_size = 0;
  // Filled in by freeze() for concrete types; 0 for abstract types.
  std::uint32_t block_capacity = 0;
  std::vector<std::uint32_t> field_offsets;
  std::uint32_t segment_bytes = 0;
};

struct LayoutPlan {
  std::uint64_t heap_size = 0;
  std::uint64_t num_blocks = 0;
  TypeId smallest_type = kNoType;
  std::uint32_t smallest_size = 0;
  // Bytes reserved for the data segment of every block: large enough for the
  // widest SOA layout and for a 64-entry forwarding-handle array.
  std::uint32_t segment_bytes = 0;
  std::uint32_t header_bytes = 0;
  std::uint32_t block_bytes = 0;
};

struct FieldRef {
  TypeId holder;
  std::uint32_t field_index;
  bool operator==(const FieldRef&) const = default;
};

class Registry {
 public:
  TypeId register_type(std::string name, std::optional<TypeId> supertype, bool is_abstract,
                       std::vector<FieldDescriptor> fields);

  const LayoutPlan& freeze(std::uint64_t heap_size);
  bool frozen() const { return frozen_; }
  const LayoutPlan& layout() const;

  std::size_t num_types() const { return types_.size(); }
  const TypeDescriptor& type(TypeId id) const;
  std::optional<TypeId> find(std::string_view name) const;
  TypeId id_of(std::string_view name) const;

  std::size_t field_location(TypeId id, std::uint32_t field_index, std::uint32_t capacity, std::uint32_t slot) const;
  std::size_t segment_size(TypeId id, std::uint32_t capacity) const;

  std::vector<FieldRef> reference_bearing_scan_set(TypeId target) const;
  bool is_subtype(TypeId a, TypeId b) const;

  std::vector<TypeId> concrete_types() const;
  // Concrete types S with S <: id, in ascending id order.
  std::vector<TypeId> concrete_subtypes(TypeId id) const;

 private:
  void check_id(TypeId id) const;
  std::vector<TypeDescriptor> types_;
  LayoutPlan plan_;
  bool frozen_ = false;
};

std::uint32_t capacity_for(std::uint32_t object_size, std::uint32_t smallest_size);

}  // namespace soaheap
