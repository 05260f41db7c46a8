#include "forelen/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "json.hpp"

#include "forelen/detail/bytes.hpp"
#include "forelen/error.hpp"

namespace forelen {

namespace detail {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::kIo, "read failed for " + path);
  return bytes;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write failed for " + path);
}

std::string describe_magic(std::string_view found) {
  bool printable = std::all_of(found.begin(), found.end(),
                               [](char c) { return c >= 0x20 && c < 0x7f; });
  if (printable) return "\"" + std::string(found) + "\"";
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex = "0x";
  for (char c : found) {
    auto b = static_cast<unsigned char>(c);
    hex += kHex[b >> 4];
    hex += kHex[b & 0xf];
  }
  return hex;
}

}  // namespace detail

namespace {

constexpr std::string_view kDumpMagic = "FLEN";
constexpr std::size_t kHeaderBytes = 12;

using nlohmann::ordered_json;

void write_sequence(detail::ByteWriter& w, const HiddenSequence& seq) {
  for (double x : seq.states.data) w.f32(static_cast<float>(x));
}

void write_entropies(detail::ByteWriter& w, const HiddenSequence& seq) {
  for (double x : seq.entropies) w.f32(static_cast<float>(x));
}

HiddenSequence read_states(detail::ByteReader& r, std::uint32_t rows, std::uint32_t dim) {
  HiddenSequence seq;
  seq.states = Matrix(rows, dim);
  for (double& x : seq.states.data) x = r.f32("hidden states");
  return seq;
}

}  // namespace

std::filesystem::path manifest_path(const std::filesystem::path& dump) {
  auto p = dump;
  p += ".manifest.jsonl";
  return p;
}

std::vector<std::uint8_t> encode_dump(const Dataset& records, DumpManifest* manifest) {
  require(!records.empty(), ErrorKind::kUsage, "refusing to write an empty dump");
  const std::size_t dim = records.front().prompt.dim();
  detail::ByteWriter w;
  w.raw(kDumpMagic);
  w.u32(kDumpVersion);
  w.u32(static_cast<std::uint32_t>(dim));
  if (manifest) {
    manifest->version = kDumpVersion;
    manifest->dim = static_cast<std::uint32_t>(dim);
    manifest->entries.clear();
  }
  for (const auto& rec : records) {
    rec.validate();
    require(rec.prompt.dim() == dim, ErrorKind::kConsistency,
            "record " + rec.id + " has a different hidden dimension");
    const auto n = static_cast<std::uint32_t>(rec.prompt.tokens());
    const auto t = static_cast<std::uint32_t>(rec.response ? rec.response->tokens() : 0);
    if (manifest) manifest->entries.push_back({rec.id, w.size(), n, t, rec.length});
    w.u32(n);
    w.u32(t);
    w.u32(rec.length);
    write_sequence(w, rec.prompt);
    if (rec.response) write_sequence(w, *rec.response);
    write_entropies(w, rec.prompt);
    if (rec.response) write_entropies(w, *rec.response);
  }
  return std::move(w.bytes());
}

Dataset decode_dump(std::span<const std::uint8_t> bytes, std::uint32_t* dim_out,
                    std::vector<std::uint64_t>* offsets) {
  detail::ByteReader r(bytes);
  const std::string magic = r.raw(4, "dump magic");
  if (magic != kDumpMagic) {
    fail(ErrorKind::kMagicMismatch, "expected \"FLEN\", found " + detail::describe_magic(magic));
  }
  const std::uint32_t version = r.u32("dump version");
  if (version != kDumpVersion) {
    fail(ErrorKind::kVersionMismatch, "unsupported dump version " + std::to_string(version));
  }
  const std::uint32_t dim = r.u32("hidden dimension");
  require(dim >= 1, ErrorKind::kMalformed, "dump declares hidden dimension 0");
  if (dim_out) *dim_out = dim;

  Dataset records;
  while (r.remaining() > 0) {
    const std::uint64_t offset = r.position();
    if (offsets) offsets->push_back(offset);
    const std::uint32_t n = r.u32("record header");
    const std::uint32_t t = r.u32("record header");
    const std::uint32_t y = r.u32("record header");
    const std::string where = "record at byte " + std::to_string(offset);
    if (n == 0) fail(ErrorKind::kEmptyPrompt, where + " has n = 0");
    require(y >= 1, ErrorKind::kMalformed, where + " has y = 0");
    require(t == 0 || t == y, ErrorKind::kMalformed, where + " has T != y");
    const std::uint64_t payload = (static_cast<std::uint64_t>(n) + t) * (dim + 1u) * 4u;
    r.need(payload, "record payload");

    ActivationRecord rec;
    rec.id = std::to_string(records.size());
    rec.length = y;
    rec.prompt = read_states(r, n, dim);
    if (t > 0) rec.response = read_states(r, t, dim);
    rec.prompt.entropies.resize(n);
    for (double& h : rec.prompt.entropies) h = r.f32("entropies");
    if (rec.response) {
      rec.response->entropies.resize(t);
      for (double& h : rec.response->entropies) h = r.f32("entropies");
    }
    try {
      rec.validate();
    } catch (const Error& e) {
      fail(ErrorKind::kMalformed, where + ": " + e.what());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void quantize_to_float32(Dataset& records) {
  auto narrow = [](std::vector<double>& v) {
    for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  };
  for (auto& rec : records) {
    narrow(rec.prompt.states.data);
    narrow(rec.prompt.entropies);
    if (rec.response) {
      narrow(rec.response->states.data);
      narrow(rec.response->entropies);
    }
  }
}

void write_dump(const Dataset& records, const std::filesystem::path& path,
                const std::string& note) {
  DumpManifest manifest;
  const auto bytes = encode_dump(records, &manifest);
  detail::write_file(path.string(), bytes);

  std::string lines;
  ordered_json header;
  header["magic"] = std::string(kDumpMagic);
  header["version"] = manifest.version;
  header["d"] = manifest.dim;
  if (!note.empty()) header["note"] = note;
  lines += header.dump() + "\n";
  for (const auto& e : manifest.entries) {
    ordered_json line;
    line["id"] = e.id;
    line["byte_offset"] = e.byte_offset;
    line["n"] = e.prompt_tokens;
    line["T"] = e.response_tokens;
    line["y"] = e.length;
    lines += line.dump() + "\n";
  }
  std::vector<std::uint8_t> text(lines.begin(), lines.end());
  detail::write_file(manifest_path(path).string(), text);
}

DumpManifest read_manifest(const std::filesystem::path& dump) {
  const auto path = manifest_path(dump);
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open manifest " + path.string());
  DumpManifest manifest;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    ordered_json j;
    try {
      j = ordered_json::parse(line);
      if (!have_header) {
        const auto magic = j.at("magic").get<std::string>();
        if (magic != kDumpMagic) {
          fail(ErrorKind::kMagicMismatch,
               "manifest declares magic " + detail::describe_magic(magic));
        }
        manifest.version = j.at("version").get<std::uint32_t>();
        manifest.dim = j.at("d").get<std::uint32_t>();
        if (j.contains("note")) manifest.note = j["note"].get<std::string>();
        have_header = true;
        continue;
      }
      manifest.entries.push_back({j.at("id").get<std::string>(),
                                  j.at("byte_offset").get<std::uint64_t>(),
                                  j.at("n").get<std::uint32_t>(), j.at("T").get<std::uint32_t>(),
                                  j.at("y").get<std::uint32_t>()});
    } catch (const ordered_json::exception& e) {
      fail(ErrorKind::kMalformed,
           path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  require(have_header, ErrorKind::kMalformed, path.string() + " has no header line");
  return manifest;
}

Dataset read_dump(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path.string());
  std::uint32_t dim = 0;
  std::vector<std::uint64_t> offsets;
  Dataset records = decode_dump(bytes, &dim, &offsets);
  if (!std::filesystem::exists(manifest_path(path))) return records;

  const DumpManifest manifest = read_manifest(path);
  require(manifest.version == kDumpVersion, ErrorKind::kVersionMismatch,
          "manifest declares version " + std::to_string(manifest.version));
  require(manifest.dim == dim, ErrorKind::kConsistency, "manifest and dump disagree on d");
  require(manifest.entries.size() == records.size(), ErrorKind::kConsistency,
          "manifest lists " + std::to_string(manifest.entries.size()) + " records, dump holds " +
              std::to_string(records.size()));
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (i > 0 && e.byte_offset <= manifest.entries[i - 1].byte_offset) {
      fail(ErrorKind::kOffsetOutOfRange, "manifest offsets not increasing at line " +
                                             std::to_string(i + 2));
    }
    if (e.byte_offset != offsets[i] || e.byte_offset < kHeaderBytes ||
        e.byte_offset >= bytes.size()) {
      fail(ErrorKind::kOffsetOutOfRange, "manifest offset " + std::to_string(e.byte_offset) +
                                             " for " + e.id + " does not start a record");
    }
    const auto& rec = records[i];
    const auto t = static_cast<std::uint32_t>(rec.response ? rec.response->tokens() : 0);
    require(e.prompt_tokens == rec.prompt.tokens() && e.response_tokens == t &&
                e.length == rec.length,
            ErrorKind::kConsistency, "manifest fields for " + e.id + " differ from the record");
    records[i].id = e.id;
  }
  return records;
}

void SynthConfig::validate() const {
  require(num_records >= 1, ErrorKind::kUsage, "num_records must be at least 1");
  require(dim >= 1, ErrorKind::kUsage, "d must be at least 1");
  require(prompt_min >= 1 && prompt_min <= prompt_max, ErrorKind::kUsage,
          "prompt length range must satisfy 1 <= min <= max");
  require(length_max >= 1, ErrorKind::kUsage, "length_max must be at least 1");
  require(std::isfinite(length_mu) && std::isfinite(length_sigma) && length_sigma >= 0.0,
          ErrorKind::kUsage, "lognormal parameters must be finite with sigma >= 0");
  require(signal_fraction > 0.0 && signal_fraction <= 1.0, ErrorKind::kUsage,
          "signal_fraction must lie in (0, 1]");
  require(signal_entropy_hi >= 0.0 && signal_entropy_lo >= 0.0, ErrorKind::kUsage,
          "entropy levels must be nonnegative");
  require(noise_sigma >= 0.0, ErrorKind::kUsage, "noise_sigma must be nonnegative");
  // Guard against a truncation window the lognormal essentially never hits.
  const double z_hi = (std::log(static_cast<double>(length_max) + 0.5) - length_mu) /
                      std::max(length_sigma, 1e-300);
  require(length_sigma > 0.0 ? z_hi > -6.0 : std::exp(length_mu) <= length_max + 0.5,
          ErrorKind::kUsage, "length distribution has no mass inside [1, length_max]");
}

namespace {

std::uint32_t draw_length(SeededRng& rng, const SynthConfig& c) {
  for (;;) {
    const double v = std::round(rng.lognormal(c.length_mu, c.length_sigma));
    if (v >= 1.0 && v <= static_cast<double>(c.length_max)) return static_cast<std::uint32_t>(v);
  }
}

}  // namespace

Dataset synth_generate(const SynthConfig& c) {
  c.validate();
  SeededRng rng(c.seed);
  const double scale = static_cast<double>(c.length_max);
  const std::size_t d = c.dim;
  Dataset out;
  out.reserve(c.num_records);
  const std::size_t id_width = std::to_string(c.num_records - 1).size();
  for (std::size_t r = 0; r < c.num_records; ++r) {
    ActivationRecord rec;
    std::string num = std::to_string(r);
    rec.id = "syn-" + std::string(id_width - num.size(), '0') + num;
    rec.length = draw_length(rng, c);
    const auto n = static_cast<std::size_t>(rng.uniform_int(c.prompt_min, c.prompt_max));
    const auto k = static_cast<std::size_t>(
        std::ceil(c.signal_fraction * static_cast<double>(n) - 1e-12));

    std::vector<std::size_t> positions(n);
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    rng.shuffle(positions);
    std::vector<bool> informative(n, false);
    for (std::size_t i = 0; i < k; ++i) informative[positions[i]] = true;

    const double y = static_cast<double>(rec.length);
    rec.prompt.states = Matrix(n, d);
    rec.prompt.entropies.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      auto row = rec.prompt.states.row(t);
      const double noise = rng.normal(0.0, c.noise_sigma);
      row[0] = informative[t] ? y / scale + noise : noise;
      for (std::size_t j = 1; j < d; ++j) row[j] = rng.normal();
      rec.prompt.entropies[t] = informative[t] ? c.signal_entropy_hi : c.signal_entropy_lo;
    }

    if (c.with_response) {
      HiddenSequence resp;
      resp.states = Matrix(rec.length, d);
      resp.entropies.assign(rec.length, c.signal_entropy_lo);
      for (std::size_t t = 1; t <= rec.length; ++t) {
        auto row = resp.states.row(t - 1);
        const double step = static_cast<double>(t);
        row[0] = (y - step) / scale + rng.normal(0.0, c.noise_sigma);
        if (d > 1) row[1] = step / scale + rng.normal(0.0, c.noise_sigma);
        if (d > 2) row[2] = 1.0;
        for (std::size_t j = 3; j < d; ++j) row[j] = rng.normal();
      }
      rec.response = std::move(resp);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

DataSplit split(const Dataset& records, const std::array<double, 3>& ratios, std::uint64_t seed) {
  for (double r : ratios) {
    require(std::isfinite(r) && r > 0.0, ErrorKind::kUsage, "split ratios must be positive");
  }
  const std::size_t n = records.size();
  require(n >= ratios.size(), ErrorKind::kUsage,
          "cannot split " + std::to_string(n) + " records into 3 parts");
  const double total = ratios[0] + ratios[1] + ratios[2];
  const auto part = [&](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r / total));
  };
  const std::size_t n_val = part(ratios[1]);
  const std::size_t n_test = part(ratios[2]);
  const std::size_t n_train = n - n_val - n_test;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng(seed);
  rng.shuffle(order);

  DataSplit s;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& rec = records[order[i]];
    if (i < n_train) {
      s.train.push_back(rec);
    } else if (i < n_train + n_val) {
      s.val.push_back(rec);
    } else {
      s.test.push_back(rec);
    }
  }
  return s;
}

}  // namespace forelen
