#include "lrnr/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace lrnr {

namespace {

constexpr char kMagic[4] = {'L', 'R', 'N', 'R'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char buf[4];
    for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(buf), 8);
}

void write_f64(std::ostream& os, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    write_u64(os, bits);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char buf[4];
    is.read(reinterpret_cast<char*>(buf), 4);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char buf[8];
    is.read(reinterpret_cast<char*>(buf), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

double read_f64(std::istream& is) {
    const std::uint64_t bits = read_u64(is);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

}  // namespace

void Checkpoint::add_tensor(const std::string& name, const DenseMatrix& m) {
    Tensor t;
    t.name = name;
    t.dims = {static_cast<std::uint64_t>(m.rows), static_cast<std::uint64_t>(m.cols)};
    t.data = m.data;
    tensors.push_back(std::move(t));
}

void Checkpoint::add_tensor(const std::string& name, const DenseVector& v) {
    Tensor t;
    t.name = name;
    t.dims = {static_cast<std::uint64_t>(v.len())};
    t.data = v.data;
    tensors.push_back(std::move(t));
}

const Checkpoint::Tensor& Checkpoint::find(const std::string& name) const {
    for (const Tensor& t : tensors) {
        if (t.name == name) return t;
    }
    throw std::runtime_error("checkpoint: missing tensor " + name);
}

bool Checkpoint::has(const std::string& name) const {
    for (const Tensor& t : tensors) {
        if (t.name == name) return true;
    }
    return false;
}

DenseMatrix Checkpoint::get_matrix(const std::string& name) const {
    const Tensor& t = find(name);
    require(t.dims.size() == 2, "checkpoint: tensor " + name + " is not a matrix");
    DenseMatrix m(static_cast<std::size_t>(t.dims[0]), static_cast<std::size_t>(t.dims[1]));
    m.data = t.data;
    return m;
}

DenseVector Checkpoint::get_vector(const std::string& name) const {
    const Tensor& t = find(name);
    require(t.dims.size() == 1, "checkpoint: tensor " + name + " is not a vector");
    DenseVector v(static_cast<std::size_t>(t.dims[0]));
    v.data = t.data;
    return v;
}

void checkpoint_save(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    os.write(kMagic, 4);
    write_u32(os, Checkpoint::kVersion);
    write_u64(os, ckpt.tensors.size());
    for (const Checkpoint::Tensor& t : ckpt.tensors) {
        write_u32(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        write_u32(os, static_cast<std::uint32_t>(t.dims.size()));
        std::uint64_t count = 1;
        for (std::uint64_t d : t.dims) {
            write_u64(os, d);
            count *= d;
        }
        require(count == t.data.size(), "checkpoint: tensor size mismatch for " + t.name);
        for (double d : t.data) write_f64(os, d);
    }
    const std::string meta = ckpt.meta.dump();
    write_u64(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    if (!os) throw std::runtime_error("checkpoint: write failure on " + path);
}

Checkpoint checkpoint_load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const std::uint32_t version = read_u32(is);
    if (version != Checkpoint::kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ckpt;
    const std::uint64_t n_tensors = read_u64(is);
    for (std::uint64_t k = 0; k < n_tensors; ++k) {
        Checkpoint::Tensor t;
        const std::uint32_t name_len = read_u32(is);
        t.name.resize(name_len);
        is.read(t.name.data(), name_len);
        if (!is) throw std::runtime_error("checkpoint: truncated file");
        const std::uint32_t rank = read_u32(is);
        std::uint64_t count = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            t.dims.push_back(read_u64(is));
            count *= t.dims.back();
        }
        t.data.resize(count);
        for (std::uint64_t i = 0; i < count; ++i) t.data[i] = read_f64(is);
        ckpt.tensors.push_back(std::move(t));
    }
    const std::uint64_t meta_len = read_u64(is);
    std::string meta(meta_len, '\0');
    is.read(meta.data(), static_cast<std::streamsize>(meta_len));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    ckpt.meta = nlohmann::json::parse(meta);
    return ckpt;
}

void put_lrnr(Checkpoint& ckpt, const LrnrParams& params) {
    params.validate();
    for (std::size_t l = 0; l < params.depth(); ++l) {
        const std::string tag = std::to_string(l + 1);
        ckpt.add_tensor("lrnr.u." + tag, params.u[l]);
        ckpt.add_tensor("lrnr.v." + tag, params.v[l]);
        ckpt.add_tensor("lrnr.b." + tag, params.b[l]);
    }
    ckpt.meta["lrnr"] = {{"widths", params.widths}, {"ranks", params.ranks}};
}

LrnrParams get_lrnr(const Checkpoint& ckpt) {
    LrnrParams params;
    params.widths = ckpt.meta.at("lrnr").at("widths").get<std::vector<std::size_t>>();
    params.ranks = ckpt.meta.at("lrnr").at("ranks").get<std::vector<std::size_t>>();
    for (std::size_t l = 0; l < params.ranks.size(); ++l) {
        const std::string tag = std::to_string(l + 1);
        params.u.push_back(ckpt.get_matrix("lrnr.u." + tag));
        params.v.push_back(ckpt.get_matrix("lrnr.v." + tag));
        params.b.push_back(ckpt.get_vector("lrnr.b." + tag));
    }
    params.validate();
    return params;
}

void put_hyper(Checkpoint& ckpt, const HyperParams& theta) {
    theta.validate();
    for (std::size_t k = 0; k < theta.w.size(); ++k) {
        const std::string tag = std::to_string(k + 1);
        ckpt.add_tensor("hyper.w." + tag, theta.w[k]);
        ckpt.add_tensor("hyper.b." + tag, theta.b[k]);
    }
    ckpt.meta["hyper"] = {{"layers", theta.w.size()},
                          {"split", theta.split},
                          {"box_lo", theta.box.lo},
                          {"box_hi", theta.box.hi}};
}

HyperParams get_hyper(const Checkpoint& ckpt) {
    HyperParams theta;
    const auto& meta = ckpt.meta.at("hyper");
    const std::size_t layers = meta.at("layers").get<std::size_t>();
    theta.split = meta.at("split").get<std::vector<std::size_t>>();
    theta.box.lo = meta.at("box_lo").get<std::array<double, 3>>();
    theta.box.hi = meta.at("box_hi").get<std::array<double, 3>>();
    for (std::size_t k = 0; k < layers; ++k) {
        const std::string tag = std::to_string(k + 1);
        theta.w.push_back(ckpt.get_matrix("hyper.w." + tag));
        theta.b.push_back(ckpt.get_vector("hyper.b." + tag));
    }
    theta.validate();
    return theta;
}

void put_fast(Checkpoint& ckpt, const FastParams& fast) {
    fast.validate();
    ckpt.add_tensor("fast.v_in", fast.v_in);
    ckpt.add_tensor("fast.u_out", fast.u_out);
    ckpt.add_tensor("fast.b_out", fast.b_out);
    for (std::size_t l = 0; l + 1 < fast.depth(); ++l) {
        const std::string tag = std::to_string(l + 1);
        ckpt.add_tensor("fast.u_hat." + tag, fast.u_hat[l]);
        ckpt.add_tensor("fast.b_hat." + tag, fast.b_hat[l]);
        ckpt.add_tensor("fast.v_hat." + tag, fast.v_hat[l]);
    }
    ckpt.meta["fast"] = {{"ranks", fast.ranks}, {"red_ranks", fast.red_ranks}};
}

bool has_fast(const Checkpoint& ckpt) { return ckpt.meta.contains("fast"); }

FastParams get_fast(const Checkpoint& ckpt) {
    FastParams fast;
    fast.ranks = ckpt.meta.at("fast").at("ranks").get<std::vector<std::size_t>>();
    fast.red_ranks = ckpt.meta.at("fast").at("red_ranks").get<std::vector<std::size_t>>();
    fast.v_in = ckpt.get_matrix("fast.v_in");
    fast.u_out = ckpt.get_matrix("fast.u_out");
    fast.b_out = ckpt.get_vector("fast.b_out");
    for (std::size_t l = 0; l + 1 < fast.ranks.size(); ++l) {
        const std::string tag = std::to_string(l + 1);
        fast.u_hat.push_back(ckpt.get_matrix("fast.u_hat." + tag));
        fast.b_hat.push_back(ckpt.get_vector("fast.b_hat." + tag));
        fast.v_hat.push_back(ckpt.get_matrix("fast.v_hat." + tag));
    }
    fast.validate();
    return fast;
}

void put_eim(Checkpoint& ckpt, const std::vector<reduction::EimBasis>& bases) {
    nlohmann::json idx = nlohmann::json::array();
    for (std::size_t l = 0; l < bases.size(); ++l) {
        ckpt.add_tensor("eim.xi." + std::to_string(l + 1), bases[l].xi);
        idx.push_back(bases[l].indices);
    }
    ckpt.meta["eim"] = {{"indices", idx}};
}

std::vector<reduction::EimBasis> get_eim(const Checkpoint& ckpt) {
    std::vector<reduction::EimBasis> bases;
    const auto idx = ckpt.meta.at("eim").at("indices");
    for (std::size_t l = 0; l < idx.size(); ++l) {
        reduction::EimBasis b;
        b.xi = ckpt.get_matrix("eim.xi." + std::to_string(l + 1));
        b.indices = idx[l].get<std::vector<std::size_t>>();
        const std::size_t r = b.indices.size();
        DenseMatrix block(r, r);
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < r; ++j) block.at(i, j) = b.xi.at(b.indices[i], j);
        b.block_lu = lu_factor(block);
        bases.push_back(std::move(b));
    }
    return bases;
}

void put_sampling(Checkpoint& ckpt, const reduction::SamplingSetX& sampling) {
    nlohmann::json pts = nlohmann::json::array();
    for (const pde::Point& p : sampling.points) pts.push_back({p.x, p.t});
    ckpt.meta["sampling_x"] = pts;
}

reduction::SamplingSetX get_sampling(const Checkpoint& ckpt) {
    reduction::SamplingSetX s;
    for (const auto& p : ckpt.meta.at("sampling_x")) {
        s.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    }
    return s;
}

}  // namespace lrnr
