#ifndef DIT_DATA_HPP
#define DIT_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dit/tensor.hpp"

namespace dit {

// One (source, target) pair: black outline drawing and the same shape
// filled with a color derived from its geometry. Pixels in [-1, 1],
// tensors shaped [3, S, S].
struct PairedSample {
    Tensor source;
    Tensor target;
    std::uint64_t sample_id = 0;
};

struct ManifestEntry {
    std::uint64_t sample_id = 0;
    std::string source_path;  // relative to the manifest's directory
    std::string target_path;
};

struct DatasetManifest {
    std::string version = "1";
    std::uint64_t seed = 0;
    std::size_t image_size = 0;
    std::size_t count = 0;
    std::string split;  // "train" or "test"
    std::vector<ManifestEntry> entries;
    std::string base_dir;  // set on parse; resolves entry paths
};

// Binary PPM (P6), 8-bit. [-1,1] maps to bytes by round((v+1)*127.5).
void write_image(const std::string& path, const Tensor& img);
Tensor read_image(const std::string& path);

// Deterministic pair generation; fully determined by (seed, sample_id, S).
PairedSample generate_pair(std::uint64_t seed, std::uint64_t sample_id, std::size_t S);

struct DatasetPair {
    DatasetManifest train;
    DatasetManifest test;
};

// Writes train/test images plus two manifest files under out_dir.
// Train ids are [0, n_train), test ids [n_train, n_train + n_test).
DatasetPair generate_dataset(std::uint64_t seed, std::size_t n_train, std::size_t n_test,
                             std::size_t S, const std::string& out_dir);

void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

// Loads one entry's images, resolving paths against the manifest base_dir.
PairedSample load_sample(const DatasetManifest& m, std::size_t entry_index);

}  // namespace dit

#endif
