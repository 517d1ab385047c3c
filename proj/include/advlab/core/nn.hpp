#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "advlab/core/autodiff.hpp"
#include "advlab/core/conv.hpp"

namespace advlab {
namespace nn {

using StateDict = std::map<std::string, Tensor>;

class Module;

// Parameters are enumerated on demand through visit(), so modules keep value
// semantics (copying shares the underlying parameter Vars; use state_dict to
// deep-copy weights).
struct ParamVisitor {
    std::string prefix;
    std::vector<std::pair<std::string, Var>>* out;

    void param(const std::string& name, const Var& p) {
        if (p) out->emplace_back(prefix + name, p);
    }
    void child(const std::string& name, const Module& m);
};

class Module {
public:
    virtual ~Module() = default;
    virtual void visit(ParamVisitor& v) const = 0;

    std::vector<std::pair<std::string, Var>> named_parameters() const {
        std::vector<std::pair<std::string, Var>> out;
        ParamVisitor v{"", &out};
        visit(v);
        return out;
    }

    std::vector<Var> parameters() const {
        std::vector<Var> out;
        for (auto& [name, p] : named_parameters()) out.push_back(p);
        return out;
    }

    int64_t parameter_count() const {
        int64_t n = 0;
        for (auto& [name, p] : named_parameters()) n += p->val.numel();
        return n;
    }

    StateDict state_dict() const {
        StateDict sd;
        for (auto& [name, p] : named_parameters()) sd[name] = p->val;
        return sd;
    }

    void load_state_dict(const StateDict& sd) {
        auto params = named_parameters();
        if (sd.size() != params.size())
            throw IntegrityError("state dict has " + std::to_string(sd.size()) + " entries, module expects " +
                                 std::to_string(params.size()));
        for (auto& [name, p] : params) {
            auto it = sd.find(name);
            if (it == sd.end()) throw IntegrityError("state dict missing parameter " + name);
            if (it->second.shape != p->val.shape)
                throw ShapeError("parameter " + name + " shape mismatch " + it->second.shape_str() + " vs " +
                                 p->val.shape_str());
            p->val = it->second;
        }
    }
};

inline void ParamVisitor::child(const std::string& name, const Module& m) {
    std::string saved = prefix;
    prefix += name + ".";
    m.visit(*this);
    prefix = std::move(saved);
}

inline Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
    return Tensor::uniform(std::move(shape), rng, -limit, limit);
}

class Linear : public Module {
public:
    Linear() = default;
    Linear(int in, int out, Rng& rng, bool zero_init = false) {
        Tensor w = zero_init ? Tensor::zeros({in, out}) : kaiming_uniform({in, out}, in, rng);
        weight = leaf(std::move(w));
        bias = leaf(Tensor::zeros({out}));
    }

    void visit(ParamVisitor& v) const override {
        v.param("weight", weight);
        v.param("bias", bias);
    }

    // x [n,in] -> [n,out]
    Var forward(const Var& x) const { return add_rowvec(matmul(x, weight), bias); }

    Var weight, bias;
};

class Conv2dLayer : public Module {
public:
    Conv2dLayer() = default;
    Conv2dLayer(int cin, int cout, int k, int stride_, int pad_, Rng& rng, bool zero_init = false)
        : stride(stride_), pad(pad_) {
        Tensor w = zero_init ? Tensor::zeros({cout, cin, k, k})
                             : kaiming_uniform({cout, cin, k, k}, cin * k * k, rng);
        weight = leaf(std::move(w));
        bias = leaf(Tensor::zeros({cout}));
    }

    void visit(ParamVisitor& v) const override {
        v.param("weight", weight);
        v.param("bias", bias);
    }

    Var forward(const Var& x) const { return conv2d(x, weight, bias, stride, pad); }

    Var weight, bias;
    int stride = 1, pad = 0;
};

class Embedding : public Module {
public:
    Embedding() = default;
    Embedding(int vocab, int dim, Rng& rng, float stddev = 0.08f) {
        table = leaf(Tensor::randn({vocab, dim}, rng, stddev));
    }

    void visit(ParamVisitor& v) const override { v.param("table", table); }

    Var forward(const std::vector<int>& ids) const { return embedding_rows(table, ids); }

    Var table;
};

class LayerNorm : public Module {
public:
    LayerNorm() = default;
    explicit LayerNorm(int dim) {
        gain = leaf(Tensor::full({dim}, 1.0f));
        bias = leaf(Tensor::zeros({dim}));
    }

    void visit(ParamVisitor& v) const override {
        v.param("gain", gain);
        v.param("bias", bias);
    }

    Var forward(const Var& x) const { return layer_norm_rows(x, gain, bias); }

    Var gain, bias;
};

}  // namespace nn
}  // namespace advlab
