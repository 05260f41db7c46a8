#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "forelen/sequence.hpp"

namespace forelen {

// FLEN activation dump. See docs/format.md for the byte layout.
inline constexpr std::uint32_t kDumpVersion = 1;

struct ManifestEntry {
  std::string id;
  std::uint64_t byte_offset = 0;
  std::uint32_t prompt_tokens = 0;    // n
  std::uint32_t response_tokens = 0;  // T
  std::uint32_t length = 0;           // y
};

struct DumpManifest {
  std::uint32_t version = kDumpVersion;
  std::uint32_t dim = 0;
  std::string note;
  std::vector<ManifestEntry> entries;
};

std::filesystem::path manifest_path(const std::filesystem::path& dump);

// Writes the binary dump and its JSONL manifest sidecar. States and entropies
// are narrowed to float32.
void write_dump(const Dataset& records, const std::filesystem::path& path,
                const std::string& note = {});

// Reads the dump; when the manifest exists, it supplies record ids and every
// line is checked against the record at its offset. Without a manifest, ids
// are the zero-based record index.
Dataset read_dump(const std::filesystem::path& path);

DumpManifest read_manifest(const std::filesystem::path& dump);

// In-memory codec used by write_dump/read_dump.
std::vector<std::uint8_t> encode_dump(const Dataset& records, DumpManifest* manifest = nullptr);
Dataset decode_dump(std::span<const std::uint8_t> bytes, std::uint32_t* dim = nullptr,
                    std::vector<std::uint64_t>* offsets = nullptr);

// Rounds every stored real to float32, i.e. what a write/read cycle yields.
void quantize_to_float32(Dataset& records);

struct SynthConfig {
  std::size_t num_records = 2500;
  std::size_t dim = 16;
  std::uint32_t prompt_min = 16;
  std::uint32_t prompt_max = 48;
  double length_mu = 5.0;
  double length_sigma = 0.8;
  std::uint32_t length_max = 1024;
  double signal_fraction = 0.25;
  double signal_entropy_hi = 2.0;
  double signal_entropy_lo = 0.1;
  double noise_sigma = 0.05;
  bool with_response = true;
  std::uint64_t seed = 42;

  void validate() const;
};

// Planted-signal generator. Prompt tokens: a ceil(signal_fraction * n) subset
// is informative (entropy hi, coordinate 0 = y / L_max + noise), the rest have
// entropy lo and coordinate 0 = noise; other coordinates are N(0, 1).
// Response token t (1-based) has coordinate 0 = (y - t) / L_max + noise,
// coordinate 1 = t / L_max + noise, coordinate 2 = 1 (a generation marker),
// the rest N(0, 1), and entropy lo.
Dataset synth_generate(const SynthConfig& config);

struct DataSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

// Seeded shuffle, then contiguous parts of floor(N r_k / sum r) for val and
// test; train takes the remainder.
DataSplit split(const Dataset& records, const std::array<double, 3>& ratios, std::uint64_t seed);

}  // namespace forelen
