#pragma once

#include <string>
#include <utility>
#include <vector>

#include "m2at/rng.hpp"
#include "m2at/tensor.hpp"

namespace m2at {

struct LabeledImageSet {
  Tensor images;            // [n,c,h,w], pixels in [0,1]
  std::vector<int> labels;  // class ids < num_classes
  std::size_t num_classes = 0;
  std::string split;

  std::size_t size() const { return labels.size(); }
  void validate() const;
};

// CIFAR-10 binary: 3073-byte records, one label byte then three 1024-byte
// channel planes (R,G,B), each row-major 32x32; pixels scaled by 1/255.
// Expects data_batch_1..5.bin and test_batch.bin under the directory; each
// file must hold 10,000 records (30,730,000 bytes) or a 2,000-record subset
// (6,146,000 bytes).
std::pair<LabeledImageSet, LabeledImageSet> load_cifar10(const std::string& directory);

// Record reader/writer for the same container with arbitrary geometry:
// 1 + c*h*w bytes per record, channel-plane order. Values written as
// round(pixel*255), so sets loaded from the format round-trip bitwise.
LabeledImageSet read_cifar_records(const std::string& path, std::size_t c,
                                   std::size_t h, std::size_t w,
                                   std::size_t num_classes);
void write_cifar_records(const std::string& path, const LabeledImageSet& set);

// Synthetic class-conditional images built from two cues: a faint but
// perfectly class-keyed full-image dither (below the usual attack budget),
// and a high-contrast block whose grid cell matches the class most of the
// time but lands in another class's cell otherwise. Bounded per-sample pixel
// noise shrinks as margin grows; margin -> infinity removes it entirely.
// Pixels land on the 1/255 grid so the sets export losslessly. Dither
// templates depend only on (seed, K, geometry); sample s draws from stream
// (seed, sample_offset + s), so disjoint offsets carve disjoint splits of one
// underlying distribution.
LabeledImageSet synth_blobs(std::uint64_t seed, std::size_t K, std::size_t n,
                            std::size_t c, std::size_t h, std::size_t w,
                            double margin, std::size_t sample_offset = 0);

// Zero-pad 4 each side, crop back at a uniform offset, flip horizontally
// with probability 1/2. Draw order: row offset, column offset, flip.
Tensor augment(const Tensor& image, Rng& rng);

// Fisher-Yates permutation of {0..n-1}.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace m2at
