#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "partswap/rng.hpp"
#include "partswap/tensor.hpp"

namespace partswap {

struct Init {
    enum Kind { Zeros, Ones, Normal, Uniform } kind = Normal;
    double a = 0.02;  // std for Normal, half-range for Uniform

    static Init zeros() { return {Zeros, 0.0}; }
    static Init ones() { return {Ones, 0.0}; }
    static Init normal(double std) { return {Normal, std}; }
    static Init uniform(double half) { return {Uniform, half}; }
};

// Named trainable parameters. Creation is lazy and each tensor is seeded by
// hash(seed, name), so the values a parameter gets do not depend on the order
// modules first ask for it.
template <class T>
class ParamStore {
  public:
    explicit ParamStore(uint64_t seed = 0) : seed_(seed) {}

    Tensor<T> param(const std::string& name, const Shape& shape, Init init) {
        auto it = params_.find(name);
        if (it != params_.end()) {
            if (it->second.shape() != shape)
                throw ContractError("param " + name + ": shape " + shape_str(shape) +
                                    " conflicts with existing " + shape_str(it->second.shape()));
            return it->second;
        }
        if (strict_)
            throw DataError("param " + name + ": not present in loaded checkpoint");
        std::vector<T> v(numel(shape));
        switch (init.kind) {
            case Init::Zeros:
                break;
            case Init::Ones:
                std::fill(v.begin(), v.end(), T(1));
                break;
            case Init::Normal: {
                Rng rng(hash_combine(seed_, name));
                for (auto& x : v) x = T(rng.normal() * init.a);
                break;
            }
            case Init::Uniform: {
                Rng rng(hash_combine(seed_, name));
                for (auto& x : v) x = T(rng.uniform(-init.a, init.a));
                break;
            }
        }
        Tensor<T> t = Tensor<T>::param(shape, std::move(v));
        params_.emplace(name, t);
        return t;
    }

    bool has(const std::string& name) const { return params_.count(name) != 0; }
    size_t count() const { return params_.size(); }
    const std::map<std::string, Tensor<T>>& all() const { return params_; }
    uint64_t seed() const { return seed_; }
    void set_strict(bool s) { strict_ = s; }
    int64_t step() const { return step_; }
    void set_step(int64_t s) { step_ = s; }

    void zero_grad() {
        for (auto& [name, t] : params_) t.raw()->grad.assign(t.size(), T(0));
    }

    int64_t grad_count() const {
        int64_t n = 0;
        for (auto& [name, t] : params_)
            if (!t.raw()->grad.empty()) ++n;
        return n;
    }

    // Decoupled weight decay Adam. Every parameter must carry a populated
    // gradient buffer (zero_grad before backward guarantees this).
    void adamw_step(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                    double eps = 1e-8) {
        ++step_;
        double bc1 = 1.0 - std::pow(beta1, double(step_));
        double bc2 = 1.0 - std::pow(beta2, double(step_));
        for (auto& [name, t] : params_) {
            Node<T>& n = *t.raw();
            if (n.grad.size() != n.val.size())
                throw ContractError("adamw_step: missing gradient for " + name);
            auto& m = moments1_[name];
            auto& v = moments2_[name];
            if (m.size() != n.val.size()) m.assign(n.val.size(), 0.0);
            if (v.size() != n.val.size()) v.assign(n.val.size(), 0.0);
            for (size_t i = 0; i < n.val.size(); ++i) {
                double g = double(n.grad[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                double mh = m[i] / bc1;
                double vh = v[i] / bc2;
                double p = double(n.val[i]);
                p -= lr * (mh / (std::sqrt(vh) + eps) + weight_decay * p);
                n.val[i] = T(p);
            }
        }
    }

    std::map<std::string, std::vector<double>>& moments1() { return moments1_; }
    std::map<std::string, std::vector<double>>& moments2() { return moments2_; }

  private:
    uint64_t seed_;
    bool strict_ = false;
    int64_t step_ = 0;
    std::map<std::string, Tensor<T>> params_;
    std::map<std::string, std::vector<double>> moments1_, moments2_;
};

// Checkpoint container: magic "FAPW", version u32, tensor count u32, then per
// tensor: name length u16, UTF-8 name, rank u8, extents u32 each, fp32 LE
// payload. Optimizer state rides along under reserved "#"-suffixed names.

namespace ckpt_detail {

inline void put_u16(std::ostream& os, uint16_t v) {
    unsigned char b[2] = {(unsigned char)(v & 0xff), (unsigned char)(v >> 8)};
    os.write((const char*)b, 2);
}
inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
    os.write((const char*)b, 4);
}
inline uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read((char*)b, 2);
    return uint16_t(b[0]) | (uint16_t(b[1]) << 8);
}
inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read((char*)b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
    return v;
}
inline void put_f32(std::ostream& os, float f) {
    uint32_t u;
    std::memcpy(&u, &f, 4);
    put_u32(os, u);
}
inline float get_f32(std::istream& is) {
    uint32_t u = get_u32(is);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
}

inline void write_tensor(std::ostream& os, const std::string& name, const Shape& shape,
                         const float* data) {
    if (name.size() > 0xffff) throw DataError("checkpoint: tensor name too long");
    put_u16(os, uint16_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    if (shape.size() > 0xff) throw DataError("checkpoint: rank too large");
    os.put(char(shape.size()));
    for (int e : shape) put_u32(os, uint32_t(e));
    for (int64_t i = 0; i < numel(shape); ++i) put_f32(os, data[i]);
}

}  // namespace ckpt_detail

template <class T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
    auto& st = const_cast<ParamStore<T>&>(store);
    uint32_t count = uint32_t(store.count()) * 3 + 1;
    os.write("FAPW", 4);
    ckpt_detail::put_u32(os, 1);  // version
    ckpt_detail::put_u32(os, count);
    {
        float step = float(store.step());
        ckpt_detail::write_tensor(os, "#step", {1}, &step);
    }
    for (const auto& [name, t] : store.all()) {
        std::vector<float> buf(t.size());
        for (int64_t i = 0; i < t.size(); ++i) buf[i] = float(t.data()[i]);
        ckpt_detail::write_tensor(os, name, t.shape(), buf.data());
        auto& m = st.moments1()[name];
        auto& v = st.moments2()[name];
        if (m.size() != size_t(t.size())) m.assign(t.size(), 0.0);
        if (v.size() != size_t(t.size())) v.assign(t.size(), 0.0);
        for (int64_t i = 0; i < t.size(); ++i) buf[i] = float(m[i]);
        ckpt_detail::write_tensor(os, name + "#m", t.shape(), buf.data());
        for (int64_t i = 0; i < t.size(); ++i) buf[i] = float(v[i]);
        ckpt_detail::write_tensor(os, name + "#v", t.shape(), buf.data());
    }
    if (!os) throw DataError("checkpoint: write failed for " + path);
}

template <class T>
void load_checkpoint(const std::string& path, ParamStore<T>& store) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "FAPW", 4) != 0)
        throw DataError("checkpoint: bad magic in " + path);
    uint32_t version = ckpt_detail::get_u32(is);
    if (version != 1) throw DataError("checkpoint: unsupported version " + std::to_string(version));
    uint32_t count = ckpt_detail::get_u32(is);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t nlen = ckpt_detail::get_u16(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        int rank = is.get();
        if (rank < 0) throw DataError("checkpoint: truncated at tensor " + std::to_string(i));
        Shape shape(rank);
        for (int r = 0; r < rank; ++r) shape[r] = int(ckpt_detail::get_u32(is));
        std::vector<float> buf(numel(shape));
        for (auto& f : buf) f = ckpt_detail::get_f32(is);
        if (!is) throw DataError("checkpoint: truncated payload in " + path);

        if (name == "#step") {
            store.set_step(int64_t(buf.at(0)));
        } else if (name.size() > 2 && name.substr(name.size() - 2) == "#m") {
            auto& m = store.moments1()[name.substr(0, name.size() - 2)];
            m.assign(buf.begin(), buf.end());
        } else if (name.size() > 2 && name.substr(name.size() - 2) == "#v") {
            auto& v = store.moments2()[name.substr(0, name.size() - 2)];
            v.assign(buf.begin(), buf.end());
        } else {
            std::vector<T> vals(buf.size());
            for (size_t j = 0; j < buf.size(); ++j) vals[j] = T(buf[j]);
            store.set_strict(false);
            Tensor<T> t = store.param(name, shape, Init::zeros());
            if (t.size() != int64_t(vals.size()))
                throw DataError("checkpoint: size mismatch for " + name);
            std::copy(vals.begin(), vals.end(), t.data());
        }
    }
}

}  // namespace partswap
