#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "xproto/binary_io.hpp"
#include "xproto/dataset.hpp"
#include "xproto/linalg.hpp"
#include "xproto/rng.hpp"

namespace testing {

// Fresh empty directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("xproto_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::filesystem::path operator/(const std::string& s) const { return path / s; }
};

inline xproto::Vector random_vector(std::size_t n, xproto::Rng& rng, double scale = 1.0) {
    xproto::Vector v(n);
    for (auto& x : v) x = scale * rng.normal();
    return v;
}

inline xproto::Matrix random_matrix(std::size_t r, std::size_t c, xproto::Rng& rng, double scale = 1.0) {
    xproto::Matrix m(r, c);
    for (auto& x : m.data()) x = scale * rng.normal();
    return m;
}

// Labeled dataset with `per_relation[r]` samples of relation r, values on the f32 grid.
inline xproto::Dataset random_dataset(const std::vector<std::size_t>& per_relation, std::size_t dim,
                                      xproto::Rng& rng, xproto::Domain domain = xproto::Domain::source) {
    std::vector<xproto::EmbeddedSample> samples;
    std::vector<std::string> names;
    for (std::size_t r = 0; r < per_relation.size(); ++r) {
        names.push_back("rel" + std::to_string(r));
        for (std::size_t i = 0; i < per_relation[r]; ++i) {
            xproto::EmbeddedSample s;
            s.sample_id = samples.size();
            s.relation_id = static_cast<std::uint32_t>(r);
            s.domain = domain;
            s.base_vector.resize(dim);
            for (auto& x : s.base_vector) x = xproto::round_to_f32(rng.normal() + 0.5 * r);
            samples.push_back(std::move(s));
        }
    }
    return xproto::Dataset(std::move(samples), std::move(names), dim, domain);
}

}  // namespace testing
