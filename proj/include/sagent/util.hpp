#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sagent {

// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view data);

// 64-bit FNV-1a; stable across platforms, used for seed derivation.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t basis = 0xcbf29ce484222325ULL);

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// Order-sensitive seed combination.
std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index = 0);

// Seed of one trajectory: hash(run_seed, question_id, repeat_index).
std::uint64_t trajectory_seed(std::uint64_t run_seed, std::string_view question_id, int repeat);

std::string read_text_file(const std::filesystem::path& p);
// Writes via a temporary sibling and rename, so readers never see partial files.
void write_text_file_atomic(const std::filesystem::path& p, std::string_view content);
std::vector<std::string> read_lines(const std::filesystem::path& p);

// Current UTC time as `YYYY-MM-DDTHH:MM:SSZ`.
std::string utc_timestamp();

// Longest prefix of `s` no longer than `max_bytes` that does not split a UTF-8 sequence.
std::string_view utf8_prefix(std::string_view s, std::size_t max_bytes);

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace sagent
