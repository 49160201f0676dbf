#include "cel/data.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace cel::data {

static_assert(std::endian::native == std::endian::little,
              "dataset format is little-endian; big-endian hosts are not supported");

namespace {

std::string row_msg(const char* what, std::size_t i) {
  return std::string(what) + " at row " + std::to_string(i);
}

void write_file(const std::filesystem::path& p, const void* bytes, std::size_t n) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IntegrityError("cannot open for writing: " + p.string());
  out.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
  if (!out) throw IntegrityError("short write: " + p.string());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary | std::ios::ate);
  if (!in) throw FormatError("missing file: " + p.string());
  const auto len = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  in.read(reinterpret_cast<char*>(buf.data()), len);
  if (!in) throw IntegrityError("short read: " + p.string());
  return buf;
}

}  // namespace

ValidationReport validate_dataset(const PartialLabelDataset& ds) {
  ValidationReport rep;
  const std::uint32_t q = ds.labels.q;
  if (q < 2) rep.issues.push_back({-1, "label_space", "q must be >= 2, got " + std::to_string(q)});
  if (ds.labels.names && ds.labels.names->size() != q)
    rep.issues.push_back({-1, "label_space", "names length != q"});
  if (ds.labels.superclass_of && ds.labels.superclass_of->size() != q)
    rep.issues.push_back({-1, "label_space", "superclass map not total"});
  if (ds.features.size() != std::size_t(ds.m) * ds.d)
    rep.issues.push_back({-1, "shape", "features size != m*d"});
  if (ds.truth.size() != ds.m) rep.issues.push_back({-1, "shape", "truth length != m"});
  if (ds.candidates.m != ds.m || ds.candidates.q != q ||
      ds.candidates.bits.size() != std::size_t(ds.m) * q)
    rep.issues.push_back({-1, "shape", "candidate matrix shape mismatch"});

  if (!rep.ok()) return rep;  // row checks need consistent shapes

  for (std::size_t i = 0; i < ds.m; ++i) {
    if (ds.truth[i] >= q) {
      rep.issues.push_back({long(i), "truth_range", row_msg("truth index out of range", i)});
      continue;
    }
    const std::uint32_t cnt = ds.candidates.row_count(i);
    if (cnt == 0)
      rep.issues.push_back({long(i), "empty_candidates", row_msg("empty candidate set", i)});
    else if (!ds.candidates.test(i, ds.truth[i]))
      rep.issues.push_back({long(i), "missing_truth", row_msg("truth not in candidate set", i)});
  }
  return rep;
}

void save_dataset(const PartialLabelDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  nlohmann::json meta;
  meta["plds_version"] = 1;
  meta["m"] = ds.m;
  meta["d"] = ds.d;
  meta["q"] = ds.labels.q;
  meta["generator"] = ds.meta.kind;
  meta["rate"] = ds.meta.rate;
  meta["seed"] = ds.meta.seed;
  meta["source"] = ds.meta.source;
  meta["fallback_uniform_rows"] = ds.meta.fallback_uniform_rows;
  meta["singleton_superclass_rows"] = ds.meta.singleton_superclass_rows;
  if (ds.labels.names) meta["class_names"] = *ds.labels.names;
  if (ds.labels.superclass_of) meta["superclass_of"] = *ds.labels.superclass_of;
  const std::string text = meta.dump(2) + "\n";
  write_file(dir / "meta.json", text.data(), text.size());

  write_file(dir / "features.bin", ds.features.data(), ds.features.size() * sizeof(float));
  write_file(dir / "truth.bin", ds.truth.data(), ds.truth.size() * sizeof(std::uint16_t));

  const std::uint32_t q = ds.labels.q;
  const std::size_t row_bytes = (q + 7) / 8;
  std::vector<std::uint8_t> packed(row_bytes * ds.m, 0);
  for (std::size_t i = 0; i < ds.m; ++i)
    for (std::size_t j = 0; j < q; ++j)
      if (ds.candidates.test(i, j)) packed[i * row_bytes + j / 8] |= std::uint8_t(1u << (j % 8));
  write_file(dir / "candidates.bin", packed.data(), packed.size());
}

PartialLabelDataset load_dataset(const std::filesystem::path& dir) {
  const auto meta_bytes = read_file(dir / "meta.json");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_bytes.begin(), meta_bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("meta.json parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!meta.contains("plds_version"))
    throw FormatError("meta.json missing plds_version marker: " + (dir / "meta.json").string());
  if (meta["plds_version"].get<int>() != 1)
    throw FormatError("unsupported plds_version " + meta["plds_version"].dump());

  PartialLabelDataset ds;
  try {
    ds.m = meta.at("m").get<std::uint32_t>();
    ds.d = meta.at("d").get<std::uint32_t>();
    ds.labels.q = meta.at("q").get<std::uint32_t>();
    ds.meta.kind = meta.value("generator", std::string("none"));
    ds.meta.rate = meta.value("rate", 0.0);
    ds.meta.seed = meta.value("seed", std::uint64_t(0));
    ds.meta.source = meta.value("source", std::string());
    ds.meta.fallback_uniform_rows = meta.value("fallback_uniform_rows", std::uint64_t(0));
    ds.meta.singleton_superclass_rows = meta.value("singleton_superclass_rows", std::uint64_t(0));
    if (meta.contains("class_names"))
      ds.labels.names = meta["class_names"].get<std::vector<std::string>>();
    if (meta.contains("superclass_of"))
      ds.labels.superclass_of = meta["superclass_of"].get<std::vector<std::uint32_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("meta.json field error: ") + e.what());
  }

  const std::uint32_t q = ds.labels.q;

  const auto feat = read_file(dir / "features.bin");
  if (feat.size() != std::size_t(ds.m) * ds.d * sizeof(float))
    throw IntegrityError("features.bin size " + std::to_string(feat.size()) + " does not match m*d*4");
  ds.features.resize(std::size_t(ds.m) * ds.d);
  std::memcpy(ds.features.data(), feat.data(), feat.size());

  const auto tr = read_file(dir / "truth.bin");
  if (tr.size() != std::size_t(ds.m) * sizeof(std::uint16_t))
    throw IntegrityError("truth.bin size does not match m*2");
  ds.truth.resize(ds.m);
  std::memcpy(ds.truth.data(), tr.data(), tr.size());

  const std::size_t row_bytes = (q + 7) / 8;
  const auto packed = read_file(dir / "candidates.bin");
  if (packed.size() != row_bytes * ds.m)
    throw IntegrityError("candidates.bin size " + std::to_string(packed.size()) +
                         " does not match m*ceil(q/8)");
  ds.candidates = CandidateMatrix(ds.m, q);
  for (std::size_t i = 0; i < ds.m; ++i)
    for (std::size_t j = 0; j < q; ++j)
      ds.candidates.set(i, j, (packed[i * row_bytes + j / 8] >> (j % 8)) & 1u);

  return ds;
}

CandidateStats candidate_stats(const CandidateMatrix& c) {
  CandidateStats st;
  st.histogram.assign(c.q + 1, 0);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < c.m; ++i) {
    const std::uint32_t n = c.row_count(i);
    total += n;
    st.histogram[n] += 1;
  }
  st.avg_cls = c.m == 0 ? 0.0 : double(total) / double(c.m);
  return st;
}

CandidateStats candidate_stats(const PartialLabelDataset& ds) { return candidate_stats(ds.candidates); }

bool confidence_valid(const ConfidenceMatrix& t, const CandidateMatrix& s, double tol,
                      std::string* why) {
  if (t.m != s.m || t.q != s.q) {
    if (why) *why = "shape mismatch";
    return false;
  }
  for (std::size_t i = 0; i < t.m; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < t.q; ++j) {
      const double v = t.row(i)[j];
      if (!s.test(i, j)) {
        if (v != 0.0) {
          if (why) *why = row_msg("nonzero off-candidate entry", i);
          return false;
        }
      } else {
        if (v < 0.0) {
          if (why) *why = row_msg("negative entry", i);
          return false;
        }
        row_sum += v;
      }
    }
    if (std::abs(row_sum - 1.0) > tol) {
      if (why) *why = row_msg("row sum off by more than tol", i);
      return false;
    }
  }
  return true;
}

}  // namespace cel::data
