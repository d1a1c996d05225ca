#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace xcod {

// FNV-1a 64. Used for config and file identity digests, not for security.
class Fnv1a64 {
 public:
  void update(const void* data, std::size_t size);
  void update(std::string_view text) { update(text.data(), text.size()); }
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string digest_hex(std::string_view text);
std::string file_digest_hex(const std::filesystem::path& path);

}  // namespace xcod
