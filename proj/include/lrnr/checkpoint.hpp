#ifndef LRNR_CHECKPOINT_HPP
#define LRNR_CHECKPOINT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrnr/model.hpp"
#include "lrnr/reduction.hpp"

// Binary checkpoint container: magic "LRNR", format version, a named-tensor
// table (little-endian f64 payloads), and a JSON metadata block. Round trips
// are bitwise lossless.

namespace lrnr {

struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    struct Tensor {
        std::string name;
        std::vector<std::uint64_t> dims;
        std::vector<double> data;
    };

    std::vector<Tensor> tensors;
    nlohmann::json meta = nlohmann::json::object();

    void add_tensor(const std::string& name, const DenseMatrix& m);
    void add_tensor(const std::string& name, const DenseVector& v);
    const Tensor& find(const std::string& name) const;
    bool has(const std::string& name) const;
    DenseMatrix get_matrix(const std::string& name) const;
    DenseVector get_vector(const std::string& name) const;
};

void checkpoint_save(const Checkpoint& ckpt, const std::string& path);
Checkpoint checkpoint_load(const std::string& path);

// Model <-> checkpoint mapping.
void put_lrnr(Checkpoint& ckpt, const LrnrParams& params);
LrnrParams get_lrnr(const Checkpoint& ckpt);
void put_hyper(Checkpoint& ckpt, const HyperParams& theta);
HyperParams get_hyper(const Checkpoint& ckpt);
void put_fast(Checkpoint& ckpt, const FastParams& fast);
FastParams get_fast(const Checkpoint& ckpt);
bool has_fast(const Checkpoint& ckpt);
void put_eim(Checkpoint& ckpt, const std::vector<reduction::EimBasis>& bases);
std::vector<reduction::EimBasis> get_eim(const Checkpoint& ckpt);
void put_sampling(Checkpoint& ckpt, const reduction::SamplingSetX& sampling);
reduction::SamplingSetX get_sampling(const Checkpoint& ckpt);

}  // namespace lrnr

#endif
