#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace sevtrain {

// FNV-1a over raw bytes; used for artifact and parameter checksums.
std::uint64_t fnv1a(const void* data, std::size_t n,
                    std::uint64_t seed = 0xCBF29CE484222325ull);

template <typename T>
std::uint64_t checksum_span(std::span<const T> s, std::uint64_t seed = 0xCBF29CE484222325ull) {
  return fnv1a(s.data(), s.size_bytes(), seed);
}

// Number of worker threads: min(hardware, SEVTRAIN_THREADS if set).
int worker_threads();

// Runs fn(chunk_begin, chunk_end) over [0, n) split into fixed-size chunks.
// Chunk boundaries depend only on n and chunk_size, never on the thread
// count, so any per-chunk outputs can be reduced in chunk order for
// bit-reproducible results.
void parallel_chunks(std::size_t n, std::size_t chunk_size,
                     const std::function<void(std::size_t, std::size_t)>& fn);

// Formats a double with 9 significant digits (the project-wide CSV/JSON
// precision, chosen so serialized values round-trip stably).
std::string format_g9(double v);

std::string read_text_file(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, const std::string& content);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& p);
void write_binary_file(const std::filesystem::path& p, const void* data, std::size_t n);

void write_f32_file(const std::filesystem::path& p, std::span<const float> v);
std::vector<float> read_f32_file(const std::filesystem::path& p);

}  // namespace sevtrain
