#include "m2at/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace m2at {

void LabeledImageSet::validate() const {
  if (images.ndim() != 4 || images.extent(0) != labels.size())
    throw std::invalid_argument("dataset: images " + shape_str(images.shape) +
                                " do not match " + std::to_string(labels.size()) +
                                " labels");
  if (num_classes < 2) throw std::invalid_argument("dataset: needs at least 2 classes");
  for (const int y : labels)
    if (y < 0 || std::size_t(y) >= num_classes)
      throw std::invalid_argument("dataset: label " + std::to_string(y) + " out of range");
  for (const float v : images.data)
    if (!(v >= 0.0f && v <= 1.0f))
      throw std::invalid_argument("dataset: pixel outside [0,1]");
}

LabeledImageSet read_cifar_records(const std::string& path, std::size_t c,
                                   std::size_t h, std::size_t w,
                                   std::size_t num_classes) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
  const std::size_t record = 1 + c * h * w;
  if (bytes.size() % record != 0)
    throw std::runtime_error("dataset: " + path + " truncated at byte offset " +
                             std::to_string(bytes.size() - bytes.size() % record) +
                             " (record size " + std::to_string(record) + ")");
  const std::size_t n = bytes.size() / record;

  LabeledImageSet set;
  set.images = Tensor({n, c, h, w});
  set.labels.resize(n);
  set.num_classes = num_classes;
  for (std::size_t s = 0; s < n; ++s) {
    const unsigned char* rec = bytes.data() + s * record;
    if (rec[0] >= num_classes)
      throw std::runtime_error("dataset: " + path + " record " + std::to_string(s) +
                               " has label byte " + std::to_string(rec[0]) +
                               " >= " + std::to_string(num_classes));
    set.labels[s] = int(rec[0]);
    float* img = set.images.data.data() + s * c * h * w;
    for (std::size_t i = 0; i < c * h * w; ++i)
      img[i] = float(rec[1 + i]) * (1.0f / 255.0f);
  }
  return set;
}

void write_cifar_records(const std::string& path, const LabeledImageSet& set) {
  set.validate();
  if (set.num_classes > 256)
    throw std::invalid_argument("dataset: container stores labels as one byte");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("dataset: cannot open " + path + " for writing");
  const std::size_t n = set.size();
  const std::size_t chw = set.images.numel() / std::max<std::size_t>(n, 1);
  std::vector<unsigned char> rec(1 + chw);
  for (std::size_t s = 0; s < n; ++s) {
    rec[0] = static_cast<unsigned char>(set.labels[s]);
    const float* img = set.images.data.data() + s * chw;
    for (std::size_t i = 0; i < chw; ++i) {
      const long q = std::lround(double(img[i]) * 255.0);
      rec[1 + i] = static_cast<unsigned char>(std::clamp(q, 0L, 255L));
    }
    os.write(reinterpret_cast<const char*>(rec.data()), std::streamsize(rec.size()));
  }
  os.flush();
  if (!os) throw std::runtime_error("dataset: write failed for " + path);
}

namespace {

constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarFull = 10000 * kCifarRecord;    // 30,730,000
constexpr std::size_t kCifarSubset = 2000 * kCifarRecord;   //  6,146,000

LabeledImageSet load_cifar_file(const std::string& path, const std::string& split) {
  {
    std::ifstream probe(path, std::ios::binary | std::ios::ate);
    if (!probe) throw std::runtime_error("dataset: cannot open " + path);
    const auto size = std::size_t(probe.tellg());
    if (size % kCifarRecord != 0)
      throw std::runtime_error("dataset: " + path + " truncated at byte offset " +
                               std::to_string(size - size % kCifarRecord));
    if (size != kCifarFull && size != kCifarSubset)
      throw std::runtime_error("dataset: " + path + " is " + std::to_string(size) +
                               " bytes; expected " + std::to_string(kCifarFull) +
                               " (full) or " + std::to_string(kCifarSubset) +
                               " (2000-record subset)");
  }
  LabeledImageSet set = read_cifar_records(path, 3, 32, 32, 10);
  set.split = split;
  return set;
}

}  // namespace

std::pair<LabeledImageSet, LabeledImageSet> load_cifar10(const std::string& directory) {
  LabeledImageSet train;
  train.num_classes = 10;
  train.split = "train";
  std::vector<LabeledImageSet> parts;
  std::size_t total = 0;
  for (int b = 1; b <= 5; ++b) {
    parts.push_back(load_cifar_file(directory + "/data_batch_" + std::to_string(b) + ".bin",
                                    "train"));
    total += parts.back().size();
  }
  train.images = Tensor({total, 3, 32, 32});
  train.labels.reserve(total);
  std::size_t off = 0;
  for (const LabeledImageSet& p : parts) {
    std::copy(p.images.data.begin(), p.images.data.end(),
              train.images.data.begin() + off * 3 * 32 * 32);
    train.labels.insert(train.labels.end(), p.labels.begin(), p.labels.end());
    off += p.size();
  }
  LabeledImageSet test = load_cifar_file(directory + "/test_batch.bin", "test");
  return {std::move(train), std::move(test)};
}

LabeledImageSet synth_blobs(std::uint64_t seed, std::size_t K, std::size_t n,
                            std::size_t c, std::size_t h, std::size_t w,
                            double margin, std::size_t sample_offset) {
  if (K < 2) throw std::invalid_argument("synth_blobs: needs at least 2 classes");
  if (n < 1 || c < 1 || h < 2 || w < 2)
    throw std::invalid_argument("synth_blobs: degenerate geometry");
  if (!(margin >= 0.0)) throw std::invalid_argument("synth_blobs: negative margin");

  Rng root(seed);
  const std::size_t chw = c * h * w;

  // Two predictive cues on a flat 0.5 background, pulling in opposite
  // directions. The fragile cue is a +-6/255 full-image dither keyed to the
  // class: perfectly predictive and a huge aggregate margin over every pixel,
  // so plain training latches onto it, yet an 8/255 attacker can overwrite it
  // with the wrong class's pattern outright. The robust cue is a bright block
  // in one cell of a ceil(sqrt(K))-square grid, with contrast above twice the
  // attack budget so no attacker can move it -- but it sits in the class's
  // own cell only `reliability` of the time and in some other class's cell
  // otherwise. That makes it strictly worse than the dither on clean data, so
  // a plain cross-entropy fit keeps its block weights small; adversarial
  // training, for which the dither is worthless, falls back on it.
  std::size_t grid = 1;
  while (grid * grid < K) ++grid;
  const float contrast = 0.10f;
  const float dither = 6.0f / 255.0f;
  const double reliability = 0.9;
  std::vector<std::vector<float>> templates(K, std::vector<float>(chw, 0.5f));
  for (std::size_t k = 0; k < K; ++k) {
    Rng pat = root.substream(1, k);
    for (std::size_t i = 0; i < chw; ++i)
      templates[k][i] += pat.uniform() < 0.5 ? dither : -dither;
  }

  const double noise_amp = 0.5 / (1.0 + margin);
  LabeledImageSet set;
  set.images = Tensor({n, c, h, w});
  set.labels.resize(n);
  set.num_classes = K;
  set.split = "synth";
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t k = (sample_offset + s) % K;  // balanced
    set.labels[s] = int(k);
    Rng sub = root.substream(2, sample_offset + s);
    // Block cell: the class's own with probability `reliability`, else one of
    // the other classes' cells uniformly.
    std::size_t cell = k;
    if (sub.uniform() >= reliability) {
      const std::size_t other = sub.uniform_int(K - 2);  // inclusive: K-1 values
      cell = other >= k ? other + 1 : other;
    }
    const std::size_t gy = cell / grid, gx = cell % grid;
    const std::size_t y0 = gy * h / grid, y1 = (gy + 1) * h / grid;
    const std::size_t x0 = gx * w / grid, x1 = (gx + 1) * w / grid;
    float* img = set.images.data.data() + s * chw;
    for (std::size_t i = 0; i < chw; ++i) {
      double v = double(templates[k][i]);
      const std::size_t y = (i / w) % h, x = i % w;
      if (y >= y0 && y < y1 && x >= x0 && x < x1) v += contrast;
      if (noise_amp > 0.0) v += sub.uniform(-noise_amp, noise_amp);
      // quantize onto the container grid and clamp into range
      const long q = std::clamp(std::lround(v * 255.0), 0L, 255L);
      img[i] = float(q) * (1.0f / 255.0f);
    }
  }
  return set;
}

Tensor augment(const Tensor& image, Rng& rng) {
  if (image.ndim() != 3)
    throw std::invalid_argument("augment: expects [c,h,w], got " + shape_str(image.shape));
  const std::size_t c = image.extent(0), h = image.extent(1), w = image.extent(2);
  const std::size_t pad = 4;
  const std::size_t oy = rng.uniform_int(2 * pad);
  const std::size_t ox = rng.uniform_int(2 * pad);
  const bool flip = rng.uniform() < 0.5;

  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        // source coordinates in the padded frame
        const long sy = long(y) + long(oy) - long(pad);
        const long sx = long(x) + long(ox) - long(pad);
        float v = 0.0f;
        if (sy >= 0 && sy < long(h) && sx >= 0 && sx < long(w))
          v = image.data[(ch * h + std::size_t(sy)) * w + std::size_t(sx)];
        out.data[(ch * h + y) * w + (flip ? w - 1 - x : x)] = v;
      }
  return out;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.uniform_int(i - 1);  // inclusive {0..i-1}
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace m2at
