#pragma once

#include <bit>
#include <cassert>
#include <cstddef>
#include <cstdint>

namespace safeadapt {

/// Set of discrete action indices (< 32), stored as a bitmask.
class ActionSet {
 public:
  constexpr ActionSet() = default;
  constexpr explicit ActionSet(std::uint32_t bits) : bits_(bits) {}

  static constexpr ActionSet full(std::size_t num_actions) {
    return ActionSet(num_actions >= 32 ? ~0u : ((1u << num_actions) - 1u));
  }

  constexpr bool contains(std::size_t a) const { return (bits_ >> a) & 1u; }
  constexpr void insert(std::size_t a) { bits_ |= (1u << a); }
  constexpr void erase(std::size_t a) { bits_ &= ~(1u << a); }
  constexpr std::size_t count() const { return static_cast<std::size_t>(std::popcount(bits_)); }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint32_t bits() const { return bits_; }

  constexpr ActionSet complement(std::size_t num_actions) const {
    return ActionSet(full(num_actions).bits_ & ~bits_);
  }

  friend constexpr bool operator==(ActionSet, ActionSet) = default;

 private:
  std::uint32_t bits_ = 0;
};

}  // namespace safeadapt
