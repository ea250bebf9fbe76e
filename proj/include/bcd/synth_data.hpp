#pragma once

// Synthetic misaligned pedestrians. Every identity is K stacked horizontal
// bands; band k carries a texture shared by all identities (what makes it
// "part k") drawn in two identity-specific colors. Images are shifted
// vertically by a random amount (detection error), band boundaries and
// colors jitter per image (pose and viewpoint), and each camera applies its
// own gain and noise level.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bcd/nn.hpp"
#include "bcd/tns_io.hpp"

namespace bcd {

using Rgb = std::array<double, 3>;

inline const std::vector<Rgb>& palette() {
  static const std::vector<Rgb> colors{
      {0.85, 0.15, 0.15}, {0.15, 0.70, 0.20}, {0.15, 0.25, 0.85}, {0.90, 0.85, 0.15},
      {0.15, 0.80, 0.85}, {0.80, 0.20, 0.80}, {0.92, 0.92, 0.92}, {0.10, 0.10, 0.10},
  };
  return colors;
}

struct PartDescriptor {
  std::size_t primary = 0;    // palette index drawn where the part texture is on
  std::size_t secondary = 0;  // palette index elsewhere in the band
  bool operator==(const PartDescriptor&) const = default;
};

struct SyntheticIdentity {
  int id = 0;
  std::vector<PartDescriptor> parts;
};

enum class Split { kTrain, kQuery, kGallery };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kQuery: return "query";
    case Split::kGallery: return "gallery";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "query") return Split::kQuery;
  if (s == "gallery") return Split::kGallery;
  throw std::runtime_error("unknown split '" + s + "'");
}

struct SampleRecord {
  std::vector<double> image;  // 3×H×W in [0,1]
  int identity = 0;
  int camera = 0;
  Split split = Split::kTrain;
  int shift = 0;  // applied vertical shift in pixels, positive = down
};

struct Dataset {
  std::size_t height = 96;
  std::size_t width = 32;
  std::vector<SampleRecord> samples;

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (samples[i].split == s) out.push_back(i);
    return out;
  }
};

/// Per-image rendering parameters. Defaults give a clean, unshifted render.
struct RenderParams {
  int shift = 0;
  std::vector<int> boundary_offsets;  // K+1 entries added to the nominal band boundaries; empty = none
  std::vector<Rgb> color_offsets;     // K entries; empty = none
  double gain = 1.0;
  double noise = 0.0;
  double background = 0.5;
  bool flip = false;
};

struct SynthConfig {
  std::size_t height = 96;
  std::size_t width = 32;
  std::size_t parts = 6;
  std::size_t cameras = 6;
  int max_shift = 12;
  bool jitter = true;  // pose, color, camera gain/noise and background variation
  bool flip = false;   // random horizontal flips baked into the data
  int pose_jitter = 3;
  double color_jitter = 0.08;
  std::uint64_t seed = 1234;

  std::size_t train_ids = 32;
  std::size_t train_images_per_id = 16;
  std::size_t test_ids = 16;
  std::size_t test_images_per_id = 8;
  std::size_t queries_per_id = 3;
  std::size_t family_size = 4;  // identities sharing one prototype
  std::size_t mutations = 1;    // parts recolored per family member
};

inline void validate_synth(const SynthConfig& c) {
  if (c.parts == 0 || c.height % c.parts != 0)
    throw ConfigError("image height " + std::to_string(c.height) + " not divisible by K=" + std::to_string(c.parts));
  if (c.max_shift < 0 || static_cast<std::size_t>(c.max_shift) >= c.height)
    throw ConfigError("max_shift " + std::to_string(c.max_shift) + " must be in [0, image height)");
  if (c.cameras == 0) throw ConfigError("need at least one camera");
  if (c.queries_per_id >= c.test_images_per_id)
    throw ConfigError("queries_per_id must leave gallery images for every test identity");
  if (c.queries_per_id > c.cameras) throw ConfigError("queries_per_id cannot exceed the camera count");
  if (c.family_size == 0) throw ConfigError("family_size must be positive");
  if (c.family_size > 1 && (c.mutations == 0 || c.mutations > c.parts))
    throw ConfigError("mutations must lie in [1, K] when families have more than one member");
}

namespace detail {

/// 1 where part k's texture is on at (row within band, column).
inline bool part_texture(std::size_t k, int y, int x, int width) {
  switch (k % 6) {
    case 0: return std::abs(2 * x + 1 - width) < 12;              // central block
    case 1: return (y / 2) % 2 == 0;                              // horizontal stripes
    case 2: return (x / 2) % 2 == 0;                              // vertical stripes
    case 3: return ((y / 4) + (x / 4)) % 2 == 0;                  // checkerboard
    case 4: return (x >= 4 && x < 13) || (x >= width - 13 && x < width - 4);  // two legs
    default: return ((y + x) / 3) % 2 == 0;                      // diagonal stripes
  }
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Distinct identities built in families: each family starts from a random
/// prototype and every further member recolors `mutations` random parts of
/// it, so relatives differ in only a few parts. No two identities share the
/// full sequence of part descriptors.
inline std::vector<SyntheticIdentity> make_identities(std::size_t count, std::size_t parts, int first_id, Rng& rng,
                                                      std::size_t family_size = 1, std::size_t mutations = 1) {
  require(family_size >= 1, "make_identities: family size must be positive");
  std::uniform_int_distribution<std::size_t> color(0, palette().size() - 1);
  std::uniform_int_distribution<std::size_t> pick_part(0, parts - 1);
  auto random_descriptor = [&] {
    PartDescriptor d;
    d.primary = color(rng);
    do d.secondary = color(rng);
    while (d.secondary == d.primary);
    return d;
  };
  auto key_of = [](const SyntheticIdentity& ident) {
    std::vector<std::size_t> key;
    for (const auto& d : ident.parts) {
      key.push_back(d.primary);
      key.push_back(d.secondary);
    }
    return key;
  };
  std::set<std::vector<std::size_t>> seen;
  std::vector<SyntheticIdentity> out;
  SyntheticIdentity prototype;
  while (out.size() < count) {
    SyntheticIdentity ident;
    if (out.size() % family_size == 0) {
      prototype.parts.clear();
      for (std::size_t k = 0; k < parts; ++k) prototype.parts.push_back(random_descriptor());
      ident = prototype;
    } else {
      ident = prototype;
      for (std::size_t m = 0; m < mutations; ++m) ident.parts[pick_part(rng)] = random_descriptor();
    }
    ident.id = first_id + static_cast<int>(out.size());
    if (seen.insert(key_of(ident)).second) out.push_back(std::move(ident));
  }
  return out;
}

/// Renders one 3×H×W image. Rows outside the shifted body show background.
inline std::vector<double> render_identity(const SyntheticIdentity& ident, std::size_t height, std::size_t width,
                                           const RenderParams& params, Rng* noise_rng = nullptr) {
  const std::size_t parts = ident.parts.size();
  require(parts > 0 && height % parts == 0, "render_identity: height not divisible by part count");
  const int band = static_cast<int>(height / parts);
  std::vector<int> bounds(parts + 1);
  for (std::size_t k = 0; k <= parts; ++k) {
    bounds[k] = static_cast<int>(k) * band;
    if (!params.boundary_offsets.empty() && k > 0 && k < parts) bounds[k] += params.boundary_offsets[k];
  }
  const int h = static_cast<int>(height), w = static_cast<int>(width);
  std::vector<double> img(3 * height * width);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int y = 0; y < h; ++y) {
    const int local = y - params.shift;
    std::size_t part = parts;
    if (local >= 0 && local < h)
      for (std::size_t k = 0; k < parts; ++k)
        if (local >= bounds[k] && local < bounds[k + 1]) part = k;
    for (int x = 0; x < w; ++x) {
      const int sx = params.flip ? w - 1 - x : x;
      Rgb rgb{params.background, params.background, params.background};
      if (part < parts) {
        const auto& d = ident.parts[part];
        const bool on = detail::part_texture(part, local - bounds[part], sx, w);
        rgb = palette()[on ? d.primary : d.secondary];
        if (!params.color_offsets.empty())
          for (int ch = 0; ch < 3; ++ch) rgb[ch] += params.color_offsets[part][ch];
      }
      for (int ch = 0; ch < 3; ++ch) {
        double v = rgb[ch] * params.gain;
        if (params.noise > 0.0 && noise_rng) v += params.noise * gauss(*noise_rng);
        img[(static_cast<std::size_t>(ch) * height + y) * width + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

/// Draws the per-image nuisance parameters for a camera.
inline RenderParams draw_render_params(const SynthConfig& c, int camera, Rng& rng) {
  RenderParams p;
  if (c.max_shift > 0) p.shift = std::uniform_int_distribution<int>(-c.max_shift, c.max_shift)(rng);
  if (c.jitter) {
    std::uniform_int_distribution<int> pose(-c.pose_jitter, c.pose_jitter);
    std::uniform_real_distribution<double> tint(-c.color_jitter, c.color_jitter);
    p.boundary_offsets.assign(c.parts + 1, 0);
    for (std::size_t k = 1; k < c.parts; ++k) p.boundary_offsets[k] = pose(rng);
    p.color_offsets.resize(c.parts);
    for (auto& off : p.color_offsets)
      for (auto& v : off) v = tint(rng);
    const double cams = static_cast<double>(std::max<std::size_t>(c.cameras, 2) - 1);
    p.gain = 0.8 + 0.35 * static_cast<double>(camera) / cams;
    p.noise = 0.02 + 0.04 * static_cast<double>(camera) / cams;
    p.background = std::uniform_real_distribution<double>(0.25, 0.65)(rng);
  }
  if (c.flip) p.flip = std::bernoulli_distribution(0.5)(rng);
  return p;
}

namespace detail {

inline void append_identity_images(Dataset& ds, const SynthConfig& c, const SyntheticIdentity& ident,
                                   std::size_t count, bool test, std::uint64_t stream) {
  Rng id_rng(mix_seed(c.seed, stream));
  const int cam_offset = std::uniform_int_distribution<int>(0, static_cast<int>(c.cameras) - 1)(id_rng);
  for (std::size_t j = 0; j < count; ++j) {
    Rng rng(mix_seed(c.seed ^ 0x5bd1e995ull, stream * 4096 + j));
    SampleRecord rec;
    rec.identity = ident.id;
    rec.camera = static_cast<int>((static_cast<std::size_t>(cam_offset) + j) % c.cameras);
    rec.split = !test ? Split::kTrain : (j < c.queries_per_id ? Split::kQuery : Split::kGallery);
    const RenderParams params = draw_render_params(c, rec.camera, rng);
    rec.shift = params.shift;
    rec.image = render_identity(ident, c.height, c.width, params, &rng);
    ds.samples.push_back(std::move(rec));
  }
}

}  // namespace detail

/// Training-style dataset of `num_ids` identities with `imgs_per_id` images each.
inline Dataset generate(std::size_t num_ids, std::size_t imgs_per_id, int max_shift, Rng& rng,
                        SynthConfig base = {}) {
  if (num_ids < 2) throw ConfigError("need at least 2 identities");
  base.max_shift = max_shift;
  base.seed = rng();
  validate_synth(base);
  Rng id_rng(base.seed);
  const auto idents = make_identities(num_ids, base.parts, 0, id_rng, base.family_size, base.mutations);
  Dataset ds;
  ds.height = base.height;
  ds.width = base.width;
  for (std::size_t i = 0; i < idents.size(); ++i)
    detail::append_identity_images(ds, base, idents[i], imgs_per_id, false, i);
  return ds;
}

/// Train split plus a query/gallery split over disjoint identities. Test
/// identity j's first `queries_per_id` images (consecutive cameras) are queries.
inline Dataset generate_benchmark(const SynthConfig& c) {
  validate_synth(c);
  if (c.train_ids < 2) throw ConfigError("need at least 2 training identities");
  if (c.test_ids < 2) throw ConfigError("need at least 2 test identities");
  Rng id_rng(c.seed);
  const auto idents = make_identities(c.train_ids + c.test_ids, c.parts, 0, id_rng, c.family_size, c.mutations);
  Dataset ds;
  ds.height = c.height;
  ds.width = c.width;
  for (std::size_t i = 0; i < idents.size(); ++i) {
    const bool test = i >= c.train_ids;
    detail::append_identity_images(ds, c, idents[i], test ? c.test_images_per_id : c.train_images_per_id, test, i);
  }
  return ds;
}

/// With probability `probability`, overwrites one random rectangle covering
/// 2%-20% of the image with uniform noise. Returns whether it erased.
inline bool random_erase(std::vector<double>& image, std::size_t height, std::size_t width, double probability,
                         Rng& rng) {
  require(probability >= 0.0 && probability <= 1.0, "random_erase: probability must lie in [0,1]");
  require(image.size() % (height * width) == 0, "random_erase: image size does not match geometry");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (!(unit(rng) < probability)) return false;
  const double area = static_cast<double>(height * width);
  std::size_t eh = 1, ew = 1;
  for (int attempt = 0; attempt < 100; ++attempt) {
    const double target = area * std::uniform_real_distribution<double>(0.02, 0.2)(rng);
    const double aspect = std::exp(std::uniform_real_distribution<double>(std::log(0.3), std::log(1.0 / 0.3))(rng));
    const auto h = static_cast<std::size_t>(std::lround(std::sqrt(target * aspect)));
    const auto w = static_cast<std::size_t>(std::lround(std::sqrt(target / aspect)));
    if (h >= 1 && w >= 1 && h < height && w < width) {
      eh = h;
      ew = w;
      break;
    }
  }
  const std::size_t top = std::uniform_int_distribution<std::size_t>(0, height - eh)(rng);
  const std::size_t left = std::uniform_int_distribution<std::size_t>(0, width - ew)(rng);
  const std::size_t channels = image.size() / (height * width);
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t y = top; y < top + eh; ++y)
      for (std::size_t x = left; x < left + ew; ++x) image[(ch * height + y) * width + x] = unit(rng);
  return true;
}

inline void flip_horizontal(std::vector<double>& image, std::size_t height, std::size_t width) {
  const std::size_t channels = image.size() / (height * width);
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t y = 0; y < height; ++y) {
      auto* row = image.data() + (ch * height + y) * width;
      std::reverse(row, row + width);
    }
}

/// Writes images as <dir>/images/NNNNN.tns plus <dir>/manifest.csv.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream manifest(dir / "manifest.csv", std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.csv").string());
  manifest << "file,identity,camera,split,shift\n";
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    char name[32];
    std::snprintf(name, sizeof(name), "images/%05zu.tns", i);
    write_tns(dir / name, {3, ds.height, ds.width}, s.image);
    manifest << name << ',' << s.identity << ',' << s.camera << ',' << split_name(s.split) << ',' << s.shift << '\n';
  }
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("no manifest.csv in " + dir.string());
  std::string line;
  std::getline(manifest, line);
  if (line != "file,identity,camera,split,shift") throw std::runtime_error("unexpected manifest header: " + line);
  Dataset ds;
  bool first = true;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string file, id, cam, split, shift;
    if (!std::getline(ss, file, ',') || !std::getline(ss, id, ',') || !std::getline(ss, cam, ',') ||
        !std::getline(ss, split, ',') || !std::getline(ss, shift, ','))
      throw std::runtime_error("malformed manifest row: " + line);
    Tensor img = read_tns(dir / file);
    if (img.rank() != 3 || img.dim(0) != 3) throw std::runtime_error(file + ": expected a 3×H×W image");
    if (first) {
      ds.height = img.dim(1);
      ds.width = img.dim(2);
      first = false;
    } else if (img.dim(1) != ds.height || img.dim(2) != ds.width) {
      throw std::runtime_error(file + ": image size differs from the rest of the dataset");
    }
    SampleRecord rec;
    rec.image = img.vec();
    rec.identity = std::stoi(id);
    rec.camera = std::stoi(cam);
    rec.split = parse_split(split);
    rec.shift = std::stoi(shift);
    ds.samples.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace bcd
