#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xproto/linalg.hpp"
#include "xproto/rng.hpp"

namespace xproto {

enum class Domain { source, target };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

struct EmbeddedSample {
    std::size_t sample_id = 0;
    Vector base_vector;
    std::uint32_t relation_id = 0;
    Domain domain = Domain::source;
};

// A target-domain sample with its label stripped. Training code only ever sees these.
struct UnlabeledSample {
    std::size_t sample_id = 0;
    Vector base_vector;
};

// Immutable table of embedded samples. Construction validates every invariant
// and throws ValidationError on the first violation.
class Dataset {
public:
    Dataset(std::vector<EmbeddedSample> samples, std::vector<std::string> relation_names,
            std::size_t dim, Domain domain, bool labeled = true);

    const std::vector<EmbeddedSample>& samples() const { return samples_; }
    const EmbeddedSample& sample(std::size_t i) const { return samples_[i]; }
    std::size_t size() const { return samples_.size(); }
    const std::vector<std::string>& relation_names() const { return relation_names_; }
    std::size_t relation_count() const { return relation_names_.size(); }
    std::size_t dim() const { return dim_; }
    Domain domain() const { return domain_; }
    bool labeled() const { return labeled_; }

    // Indices (into samples()) of every sample of `relation`, in file order.
    const std::vector<std::size_t>& members(std::uint32_t relation) const {
        return members_[relation];
    }

private:
    std::vector<EmbeddedSample> samples_;
    std::vector<std::string> relation_names_;
    std::size_t dim_;
    Domain domain_;
    bool labeled_;
    std::vector<std::vector<std::size_t>> members_;
};

// Directory layout: meta.json, embeddings.f32 (count x dim little-endian f32,
// row-major), labels.u32 (count little-endian u32).
Dataset load_dataset(const std::filesystem::path& dir);

// Canonical writer. Vectors are narrowed to f32; a dataset loaded from disk
// therefore rewrites byte-identically.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

struct EpisodeSpec {
    std::size_t n_way = 5;
    std::size_t k_shot = 1;
    std::size_t q_query = 1;
};

struct Episode {
    std::vector<EmbeddedSample> support;  // n_way * k_shot, grouped by relation
    std::vector<EmbeddedSample> query;    // n_way * q_query, grouped by relation
    std::vector<std::uint32_t> relations;  // R', in draw order
};

// Relations with at least k_shot + q_query samples.
std::vector<std::uint32_t> eligible_relations(const Dataset& dataset, const EpisodeSpec& spec);

// Draws n_way relations uniformly without replacement among the eligible ones,
// then k_shot + q_query distinct samples of each.
Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec, Rng& rng);

// Owns its own generator and caches the eligible relation list. Warns once
// about relations skipped for having too few samples.
class EpisodeSampler {
public:
    EpisodeSampler(const Dataset& dataset, EpisodeSpec spec, std::uint64_t seed);

    Episode next();
    const EpisodeSpec& spec() const { return spec_; }

private:
    const Dataset* dataset_;
    EpisodeSpec spec_;
    std::vector<std::uint32_t> eligible_;
    Rng rng_;
};

// batch_size distinct samples without replacement, labels stripped.
std::vector<UnlabeledSample> sample_target_batch(const Dataset& dataset, std::size_t batch_size,
                                                 Rng& rng);

}  // namespace xproto
