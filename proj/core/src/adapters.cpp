#include "adalora/adapters.hpp"

#include <cmath>
#include <string>

#include "adalora/errors.hpp"

namespace adalora {

const char* kind_name(MatKind k) {
    switch (k) {
    case MatKind::Wq: return "wq";
    case MatKind::Wk: return "wk";
    case MatKind::Wv: return "wv";
    case MatKind::Wo: return "wo";
    case MatKind::Wf1: return "wf1";
    case MatKind::Wf2: return "wf2";
    }
    return "?";
}

MatKind kind_from_index(int i) {
    if (i < 0 || i >= kNumKinds) throw ContractError("kind_from_index: " + std::to_string(i));
    return static_cast<MatKind>(i);
}

int LoraAdapter::active_count() const {
    int c = 0;
    for (auto m : doublet_mask) c += m ? 1 : 0;
    return c;
}

int SvdAdapter::active_count() const {
    int c = 0;
    for (auto m : mask) c += m ? 1 : 0;
    return c;
}

LoraAdapter make_lora_adapter(int d1, int d2, int rank, double alpha, SplitMix64& rng,
                              int matrix_id, MatKind kind) {
    if (rank < 1 || rank > std::min(d1, d2)) {
        throw ConfigError("lora rank " + std::to_string(rank) + " invalid for " +
                          std::to_string(d1) + "x" + std::to_string(d2));
    }
    LoraAdapter ad;
    ad.a = rng.gaussian_matrix(rank, d2, kAdapterInitStd);
    ad.b = Matrix(d1, rank);
    ad.rank = rank;
    ad.alpha = alpha;
    ad.doublet_mask.assign(static_cast<std::size_t>(rank), 1);
    ad.matrix_id = matrix_id;
    ad.kind = kind;
    return ad;
}

SvdAdapter make_svd_adapter(int d1, int d2, int rank, double alpha, SplitMix64& rng,
                            int matrix_id, MatKind kind) {
    if (rank < 1 || rank > std::min(d1, d2)) {
        throw ConfigError("svd rank " + std::to_string(rank) + " invalid for " +
                          std::to_string(d1) + "x" + std::to_string(d2));
    }
    SvdAdapter ad;
    ad.p = rng.gaussian_matrix(d1, rank, kAdapterInitStd);
    ad.lambda = Matrix(1, rank);
    ad.q = rng.gaussian_matrix(rank, d2, kAdapterInitStd);
    ad.mask.assign(static_cast<std::size_t>(rank), 1);
    ad.alpha = alpha;
    ad.matrix_id = matrix_id;
    ad.kind = kind;
    return ad;
}

LoraNodes register_params(Tape& tape, const LoraAdapter& ad) {
    return LoraNodes{tape.parameter(ad.a), tape.parameter(ad.b)};
}

SvdNodes register_params(Tape& tape, const SvdAdapter& ad) {
    return SvdNodes{tape.parameter(ad.p), tape.parameter(ad.lambda), tape.parameter(ad.q)};
}

namespace {

NodeRef base_path(Tape& tape, const FrozenLinear& layer, NodeRef w0, NodeRef bias, NodeRef x) {
    NodeRef y = tape.matmul(x, w0);
    if (layer.bias.has_value()) y = tape.add_rowvec(y, bias);
    return y;
}

Matrix mask_row(const std::vector<std::uint8_t>& mask) {
    Matrix m(1, static_cast<int>(mask.size()));
    for (std::size_t i = 0; i < mask.size(); ++i) m.at(i) = mask[i] ? 1.0 : 0.0;
    return m;
}

} // namespace

NodeRef lora_forward(Tape& tape, const FrozenLinear& layer, const LoraAdapter& ad,
                     const LoraNodes& nodes, NodeRef x) {
    NodeRef w0 = tape.constant(layer.w0);
    NodeRef bias = layer.bias ? tape.constant(*layer.bias) : NodeRef{};
    NodeRef y = base_path(tape, layer, w0, bias, x);
    NodeRef t = tape.matmul(x, nodes.b);                       // seq x rank
    t = tape.scale_cols(t, tape.constant(mask_row(ad.doublet_mask)));
    t = tape.matmul(t, nodes.a);                               // seq x d2
    t = tape.scale(t, ad.alpha / ad.rank);
    return tape.add(y, t);
}

NodeRef lora_forward(Tape& tape, const FrozenLinear& layer, const LoraAdapter& ad, NodeRef x) {
    return lora_forward(tape, layer, ad, register_params(tape, ad), x);
}

NodeRef svd_forward(Tape& tape, const FrozenLinear& layer, const SvdAdapter& ad,
                    const SvdNodes& nodes, NodeRef x) {
    NodeRef w0 = tape.constant(layer.w0);
    NodeRef bias = layer.bias ? tape.constant(*layer.bias) : NodeRef{};
    NodeRef y = base_path(tape, layer, w0, bias, x);
    NodeRef t = tape.matmul(x, nodes.p);                       // seq x rank
    t = tape.scale_cols(t, nodes.lambda);
    t = tape.matmul(t, nodes.q);                               // seq x d2
    t = tape.scale(t, ad.alpha / ad.rank());
    return tape.add(y, t);
}

NodeRef svd_forward(Tape& tape, const FrozenLinear& layer, const SvdAdapter& ad, NodeRef x) {
    return svd_forward(tape, layer, ad, register_params(tape, ad), x);
}

NodeRef orth_penalty(Tape& tape, const SvdNodes& nodes) {
    const int r_p = tape.value(nodes.p).cols();
    const int r_q = tape.value(nodes.q).rows();
    NodeRef pt_p = tape.matmul(tape.transpose(nodes.p), nodes.p);
    NodeRef p_term = tape.frob_norm_sq(tape.sub(pt_p, tape.constant(Matrix::identity(r_p))));
    NodeRef q_qt = tape.matmul(nodes.q, tape.transpose(nodes.q));
    NodeRef q_term = tape.frob_norm_sq(tape.sub(q_qt, tape.constant(Matrix::identity(r_q))));
    return tape.add(p_term, q_term);
}

NodeRef orth_penalty(Tape& tape, const SvdAdapter& ad) {
    return orth_penalty(tape, register_params(tape, ad));
}

OrthPenaltyValue orth_penalty_value(const SvdAdapter& ad) {
    const Matrix ptp = matmul(transpose(ad.p), ad.p);
    const Matrix qqt = matmul(ad.q, transpose(ad.q));
    OrthPenaltyValue v;
    v.p_term = frobenius_sq(sub(ptp, Matrix::identity(ptp.rows())));
    v.q_term = frobenius_sq(sub(qqt, Matrix::identity(qqt.rows())));
    return v;
}

Matrix effective_delta(const SvdAdapter& ad) {
    Matrix pl = ad.p;  // columns scaled by masked lambda
    for (int i = 0; i < pl.rows(); ++i)
        for (int j = 0; j < pl.cols(); ++j)
            pl(i, j) *= ad.mask[static_cast<std::size_t>(j)] ? ad.lambda(0, j) : 0.0;
    return scale(matmul(pl, ad.q), ad.alpha / ad.rank());
}

Matrix effective_delta(const LoraAdapter& ad) {
    Matrix bm = ad.b;
    for (int i = 0; i < bm.rows(); ++i)
        for (int j = 0; j < bm.cols(); ++j)
            if (!ad.doublet_mask[static_cast<std::size_t>(j)]) bm(i, j) = 0.0;
    return scale(matmul(bm, ad.a), ad.alpha / ad.rank);
}

const FrozenLinear& ToyModel::frozen(int matrix_id) const {
    return blocks[static_cast<std::size_t>(matrix_id / kNumKinds)].mats[matrix_id % kNumKinds];
}

FrozenLinear& ToyModel::frozen(int matrix_id) {
    return blocks[static_cast<std::size_t>(matrix_id / kNumKinds)].mats[matrix_id % kNumKinds];
}

int ToyModel::total_active() const {
    int c = 0;
    if (adapter_set == AdapterSet::Svd)
        for (const auto& ad : svd) c += ad.active_count();
    else if (adapter_set == AdapterSet::Lora)
        for (const auto& ad : lora) c += ad.active_count();
    return c;
}

std::vector<int> ToyModel::active_ranks() const {
    std::vector<int> r;
    if (adapter_set == AdapterSet::Svd)
        for (const auto& ad : svd) r.push_back(ad.active_count());
    else if (adapter_set == AdapterSet::Lora)
        for (const auto& ad : lora) r.push_back(ad.active_count());
    return r;
}

ToyModel make_base_model(int layers, int d, int heads, int d_ffn, SplitMix64& rng) {
    if (layers < 1) throw ConfigError("model needs at least one block");
    if (heads < 1 || d % heads != 0) {
        throw ConfigError("width " + std::to_string(d) + " not divisible by " +
                          std::to_string(heads) + " heads");
    }
    ToyModel m;
    m.d = d;
    m.heads = heads;
    m.d_ffn = d_ffn;
    const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
    for (int l = 0; l < layers; ++l) {
        Block b;
        for (int k = 0; k < 4; ++k) b.mats[k].w0 = rng.gaussian_matrix(d, d, w_std);
        b.mats[static_cast<int>(MatKind::Wf1)].w0 = rng.gaussian_matrix(d, d_ffn, w_std);
        b.mats[static_cast<int>(MatKind::Wf1)].bias = rng.gaussian_matrix(1, d_ffn, kAdapterInitStd);
        b.mats[static_cast<int>(MatKind::Wf2)].w0 =
            rng.gaussian_matrix(d_ffn, d, 1.0 / std::sqrt(static_cast<double>(d_ffn)));
        b.mats[static_cast<int>(MatKind::Wf2)].bias = rng.gaussian_matrix(1, d, kAdapterInitStd);
        m.blocks.push_back(std::move(b));
    }
    return m;
}

void attach_svd_adapters(ToyModel& model, int rank, double alpha, SplitMix64& rng) {
    model.adapter_set = AdapterSet::Svd;
    model.svd.clear();
    for (int id = 0; id < model.n_matrices(); ++id) {
        const FrozenLinear& fl = model.frozen(id);
        model.svd.push_back(make_svd_adapter(fl.in_dim(), fl.out_dim(), rank, alpha, rng, id,
                                             kind_from_index(id % kNumKinds)));
    }
}

void attach_lora_adapters(ToyModel& model, const std::vector<int>& ranks, double alpha,
                          SplitMix64& rng) {
    if (static_cast<int>(ranks.size()) != model.n_matrices()) {
        throw ConfigError("expected " + std::to_string(model.n_matrices()) +
                          " ranks, got " + std::to_string(ranks.size()));
    }
    model.adapter_set = AdapterSet::Lora;
    model.lora.clear();
    for (int id = 0; id < model.n_matrices(); ++id) {
        const FrozenLinear& fl = model.frozen(id);
        model.lora.push_back(make_lora_adapter(fl.in_dim(), fl.out_dim(),
                                               ranks[static_cast<std::size_t>(id)], alpha, rng,
                                               id, kind_from_index(id % kNumKinds)));
    }
}

ModelNodes register_model(Tape& tape, const ToyModel& model, bool adapters_enabled) {
    ModelNodes nodes;
    nodes.adapters_enabled = adapters_enabled && model.adapter_set != AdapterSet::None;
    for (int id = 0; id < model.n_matrices(); ++id) {
        const FrozenLinear& fl = model.frozen(id);
        nodes.w0.push_back(tape.constant(fl.w0));
        nodes.bias.push_back(fl.bias ? tape.constant(*fl.bias) : NodeRef{});
    }
    if (nodes.adapters_enabled) {
        if (model.adapter_set == AdapterSet::Svd)
            for (const auto& ad : model.svd) nodes.svd.push_back(register_params(tape, ad));
        else
            for (const auto& ad : model.lora) nodes.lora.push_back(register_params(tape, ad));
    }
    return nodes;
}

namespace {

NodeRef adapted_matmul(Tape& tape, const ToyModel& model, const ModelNodes& nodes,
                       int matrix_id, NodeRef x) {
    const FrozenLinear& fl = model.frozen(matrix_id);
    NodeRef y = tape.matmul(x, nodes.w0[static_cast<std::size_t>(matrix_id)]);
    if (fl.bias) y = tape.add_rowvec(y, nodes.bias[static_cast<std::size_t>(matrix_id)]);
    if (!nodes.adapters_enabled) return y;
    if (model.adapter_set == AdapterSet::Svd) {
        const SvdAdapter& ad = model.svd[static_cast<std::size_t>(matrix_id)];
        const SvdNodes& an = nodes.svd[static_cast<std::size_t>(matrix_id)];
        NodeRef t = tape.matmul(x, an.p);
        t = tape.scale_cols(t, an.lambda);
        t = tape.matmul(t, an.q);
        t = tape.scale(t, ad.alpha / ad.rank());
        return tape.add(y, t);
    }
    const LoraAdapter& ad = model.lora[static_cast<std::size_t>(matrix_id)];
    const LoraNodes& an = nodes.lora[static_cast<std::size_t>(matrix_id)];
    NodeRef t = tape.matmul(x, an.b);
    Matrix mrow(1, ad.rank);
    for (int j = 0; j < ad.rank; ++j)
        mrow(0, j) = ad.doublet_mask[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
    t = tape.scale_cols(t, tape.constant(mrow));
    t = tape.matmul(t, an.a);
    t = tape.scale(t, ad.alpha / ad.rank);
    return tape.add(y, t);
}

} // namespace

NodeRef model_forward(Tape& tape, const ToyModel& model, const ModelNodes& nodes, NodeRef x) {
    if (tape.value(x).cols() != model.d) {
        throw DimensionError("model_forward: input width " +
                             std::to_string(tape.value(x).cols()) + " != model width " +
                             std::to_string(model.d));
    }
    const int dh = model.head_dim();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int l = 0; l < static_cast<int>(model.blocks.size()); ++l) {
        const int base = l * kNumKinds;
        NodeRef q = adapted_matmul(tape, model, nodes, base + static_cast<int>(MatKind::Wq), x);
        NodeRef k = adapted_matmul(tape, model, nodes, base + static_cast<int>(MatKind::Wk), x);
        NodeRef v = adapted_matmul(tape, model, nodes, base + static_cast<int>(MatKind::Wv), x);
        std::vector<NodeRef> heads;
        for (int h = 0; h < model.heads; ++h) {
            NodeRef qi = tape.col_slice(q, h * dh, dh);
            NodeRef ki = tape.col_slice(k, h * dh, dh);
            NodeRef vi = tape.col_slice(v, h * dh, dh);
            NodeRef att = tape.scale(tape.matmul(qi, tape.transpose(ki)), att_scale);
            att = tape.row_softmax(att);
            heads.push_back(tape.matmul(att, vi));
        }
        NodeRef cat = model.heads == 1 ? heads[0] : tape.hconcat(heads);
        NodeRef o = adapted_matmul(tape, model, nodes, base + static_cast<int>(MatKind::Wo), cat);
        x = tape.layer_norm(tape.add(x, o));
        NodeRef f = adapted_matmul(tape, model, nodes, base + static_cast<int>(MatKind::Wf1), x);
        f = tape.relu(f);
        f = adapted_matmul(tape, model, nodes, base + static_cast<int>(MatKind::Wf2), f);
        x = tape.layer_norm(tape.add(x, f));
    }
    return x;
}

Matrix base_forward(const ToyModel& model, const Matrix& x) {
    Tape tape;
    ModelNodes nodes = register_model(tape, model, /*adapters_enabled=*/false);
    NodeRef y = model_forward(tape, model, nodes, tape.constant(x));
    return tape.value(y);
}

Matrix adapted_forward(const ToyModel& model, const Matrix& x) {
    Tape tape;
    ModelNodes nodes = register_model(tape, model);
    NodeRef y = model_forward(tape, model, nodes, tape.constant(x));
    return tape.value(y);
}

} // namespace adalora
