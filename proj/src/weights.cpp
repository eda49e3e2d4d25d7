#include "tfe/weights.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "tfe/rng.hpp"

namespace tfe::model {

namespace {

constexpr char kMagic[4] = {'T', 'P', 'F', '3'};
constexpr std::uint32_t kVersion = 1;

Tensor scaled_normal(CounterRng& rng, std::vector<std::size_t> shape) {
    Tensor t(shape);
    const std::size_t fan_in = shape.size() >= 2 ? shape.back() : shape[0];
    const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.numel(); ++i) {
        t(i) = static_cast<float>(rng.normal(0.0, std_dev));
    }
    return t;
}

Tensor ones(std::vector<std::size_t> shape) { return Tensor(std::move(shape), 1.0f); }

ops::ScaleMlp make_qass(CounterRng& rng, std::size_t in_dim, std::size_t hidden) {
    ops::ScaleMlp mlp;
    mlp.w1 = scaled_normal(rng, {hidden, in_dim});
    mlp.b1 = Tensor({hidden}, 0.0f);
    mlp.w2 = scaled_normal(rng, {1, hidden});
    mlp.b2 = Tensor({1}, 0.0f);
    return mlp;
}

BlockWeightsT<float> make_block(CounterRng& rng, std::size_t d, std::size_t ff,
                                std::size_t qass_in, std::size_t qass_hidden) {
    BlockWeightsT<float> b;
    b.norm_attn = ones({d});
    b.norm_kv = ones({d});
    b.wq = scaled_normal(rng, {d, d});
    b.wk = scaled_normal(rng, {d, d});
    b.wv = scaled_normal(rng, {d, d});
    b.wo = scaled_normal(rng, {d, d});
    if (qass_in > 0) b.qass = make_qass(rng, qass_in, qass_hidden);
    b.norm_ffn = ones({d});
    b.ffn_w1 = scaled_normal(rng, {ff * d, d});
    b.ffn_b1 = Tensor({ff * d}, 0.0f);
    b.ffn_w2 = scaled_normal(rng, {d, ff * d});
    b.ffn_b2 = Tensor({d}, 0.0f);
    return b;
}

template <class T>
void for_each_in_qass(const std::string& prefix, ops::ScaleMlpT<T>& q,
                      const std::function<void(const std::string&, TensorT<T>&)>& fn) {
    fn(prefix + ".w1", q.w1);
    fn(prefix + ".b1", q.b1);
    fn(prefix + ".w2", q.w2);
    fn(prefix + ".b2", q.b2);
}

template <class T>
void for_each_in_block(const std::string& prefix, BlockWeightsT<T>& b,
                       const std::function<void(const std::string&, TensorT<T>&)>& fn) {
    fn(prefix + ".norm_attn", b.norm_attn);
    fn(prefix + ".norm_kv", b.norm_kv);
    fn(prefix + ".wq", b.wq);
    fn(prefix + ".wk", b.wk);
    fn(prefix + ".wv", b.wv);
    fn(prefix + ".wo", b.wo);
    if (b.has_qass()) for_each_in_qass(prefix + ".qass", b.qass, fn);
    fn(prefix + ".norm_ffn", b.norm_ffn);
    fn(prefix + ".ffn_w1", b.ffn_w1);
    fn(prefix + ".ffn_b1", b.ffn_b1);
    fn(prefix + ".ffn_w2", b.ffn_w2);
    fn(prefix + ".ffn_b2", b.ffn_b2);
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

DTensor init_orthogonal_label_embeddings(std::size_t c, std::size_t d, std::uint64_t seed) {
    if (c == 0 || d == 0) throw ConfigError("label embeddings: empty shape");
    CounterRng rng(seed, 0x0E7B);
    DTensor e({c, d});
    for (std::size_t i = 0; i < e.numel(); ++i) e(i) = rng.normal();

    // Modified Gram-Schmidt (two passes) over the first min(c, d) rows.
    const std::size_t ortho = std::min(c, d);
    for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < ortho; ++i) {
            for (std::size_t j = 0; j < i; ++j) {
                double dot = 0;
                for (std::size_t k = 0; k < d; ++k) dot += e(i, k) * e(j, k);
                for (std::size_t k = 0; k < d; ++k) e(i, k) -= dot * e(j, k);
            }
            double norm = 0;
            for (std::size_t k = 0; k < d; ++k) norm += e(i, k) * e(i, k);
            norm = std::sqrt(norm);
            if (norm < 1e-12) {
                for (std::size_t k = 0; k < d; ++k) e(i, k) = rng.normal();
                --i;
                continue;
            }
            for (std::size_t k = 0; k < d; ++k) e(i, k) /= norm;
        }
    }
    if (c <= d) return e;

    // Overcomplete case: normalize the extra rows, then run frame-potential
    // descent to push the maximal pairwise |dot| toward the Welch bound.
    for (std::size_t i = ortho; i < c; ++i) {
        double norm = 0;
        for (std::size_t k = 0; k < d; ++k) norm += e(i, k) * e(i, k);
        norm = std::sqrt(std::max(norm, 1e-12));
        for (std::size_t k = 0; k < d; ++k) e(i, k) /= norm;
    }
    const double eta = 0.3;
    std::vector<double> gram(c * c), update(c * d);
    for (int iter = 0; iter < 300; ++iter) {
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                double dot = 0;
                for (std::size_t k = 0; k < d; ++k) dot += e(i, k) * e(j, k);
                gram[i * c + j] = (i == j) ? 0.0 : dot;
            }
        }
        for (std::size_t i = 0; i < c; ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                double acc = 0;
                for (std::size_t j = 0; j < c; ++j) acc += gram[i * c + j] * e(j, k);
                update[i * d + k] = acc;
            }
        }
        for (std::size_t i = 0; i < c; ++i) {
            double norm = 0;
            for (std::size_t k = 0; k < d; ++k) {
                e(i, k) -= eta * update[i * d + k];
                norm += e(i, k) * e(i, k);
            }
            norm = std::sqrt(std::max(norm, 1e-12));
            for (std::size_t k = 0; k < d; ++k) e(i, k) /= norm;
        }
    }
    return e;
}

ModelWeights init_weights(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CounterRng rng(seed, 0x11EF);
    const std::size_t d = cfg.embed_dim;
    const std::size_t e = cfg.icl_emsize();
    const std::size_t gs = cfg.feature_group_size;
    const std::size_t dist_hd = d / cfg.dist_heads;
    const std::size_t icl_hd = cfg.icl_head_dim();

    ModelWeights w;
    w.cell_proj_w = scaled_normal(rng, {d, 2 * gs});
    w.cell_proj_b = Tensor({d}, 0.0f);

    const DTensor e_col = init_orthogonal_label_embeddings(cfg.c_max, d, seed + 1);
    w.e_col = Tensor({cfg.c_max, d});
    for (std::size_t i = 0; i < e_col.numel(); ++i) w.e_col(i) = static_cast<float>(e_col(i));
    w.target_w = scaled_normal(rng, {d});
    w.target_b = Tensor({d}, 0.0f);

    w.stage1.resize(cfg.dist_blocks);
    for (auto& block : w.stage1) {
        block.inducing_init = scaled_normal(rng, {cfg.n_inducing, d});
        block.ind = make_block(rng, d, cfg.ff_factor, dist_hd, cfg.qass_hidden);
        block.row = make_block(rng, d, cfg.ff_factor, dist_hd, cfg.qass_hidden);
    }
    w.stage1_norm = ones({d});

    w.cls_tokens = scaled_normal(rng, {cfg.n_cls_tokens, d});
    w.stage2.resize(cfg.agg_blocks);
    for (auto& block : w.stage2) {
        block = make_block(rng, d, cfg.ff_factor, 0, 0);  // plain softmax in stage 2
    }
    w.stage2_norm = ones({d});

    const DTensor e_icl = init_orthogonal_label_embeddings(cfg.c_max, e, seed + 2);
    w.e_icl = Tensor({cfg.c_max, e});
    for (std::size_t i = 0; i < e_icl.numel(); ++i) w.e_icl(i) = static_cast<float>(e_icl(i));
    w.target_icl_w = scaled_normal(rng, {e});
    w.target_icl_b = Tensor({e}, 0.0f);

    w.icl.resize(cfg.icl_layers);
    for (auto& layer : w.icl) {
        layer.norm_attn = ones({e});
        layer.norm_kv = ones({e});
        layer.wq = scaled_normal(rng, {e, e});
        layer.wk = scaled_normal(rng, {cfg.icl_kv_heads_train * icl_hd, e});
        layer.wv = scaled_normal(rng, {cfg.icl_kv_heads_train * icl_hd, e});
        layer.wk_test = scaled_normal(rng, {icl_hd, e});
        layer.wv_test = scaled_normal(rng, {icl_hd, e});
        layer.wo = scaled_normal(rng, {e, e});
        layer.qass = make_qass(rng, icl_hd, cfg.qass_hidden);
        layer.norm_ffn = ones({e});
        layer.ffn_w1 = scaled_normal(rng, {cfg.ff_factor * e, e});
        layer.ffn_b1 = Tensor({cfg.ff_factor * e}, 0.0f);
        layer.ffn_w2 = scaled_normal(rng, {e, cfg.ff_factor * e});
        layer.ffn_b2 = Tensor({e}, 0.0f);
    }
    w.icl_norm = ones({e});

    w.dec_wq = scaled_normal(rng, {cfg.decoder_heads * cfg.decoder_head_dim, e});
    w.dec_wk = scaled_normal(rng, {cfg.decoder_heads * cfg.decoder_head_dim, e});
    w.dec_qass = make_qass(rng, cfg.decoder_head_dim, cfg.qass_hidden);

    w.head_w1 = scaled_normal(rng, {cfg.ff_factor * e, e});
    w.head_b1 = Tensor({cfg.ff_factor * e}, 0.0f);
    w.head_w2 = scaled_normal(rng, {cfg.n_buckets, cfg.ff_factor * e});
    w.head_b2 = Tensor({cfg.n_buckets}, 0.0f);
    return w;
}

template <class T>
void for_each_tensor(ModelWeightsT<T>& w,
                     const std::function<void(const std::string&, TensorT<T>&)>& fn) {
    fn("cell_proj.w", w.cell_proj_w);
    fn("cell_proj.b", w.cell_proj_b);
    fn("e_col", w.e_col);
    fn("target.w", w.target_w);
    fn("target.b", w.target_b);
    for (std::size_t b = 0; b < w.stage1.size(); ++b) {
        const std::string p = "s1." + std::to_string(b);
        fn(p + ".inducing", w.stage1[b].inducing_init);
        for_each_in_block(p + ".ind", w.stage1[b].ind, fn);
        for_each_in_block(p + ".row", w.stage1[b].row, fn);
    }
    fn("s1.norm", w.stage1_norm);
    fn("cls_tokens", w.cls_tokens);
    for (std::size_t b = 0; b < w.stage2.size(); ++b) {
        for_each_in_block("s2." + std::to_string(b), w.stage2[b], fn);
    }
    fn("s2.norm", w.stage2_norm);
    fn("e_icl", w.e_icl);
    fn("target_icl.w", w.target_icl_w);
    fn("target_icl.b", w.target_icl_b);
    for (std::size_t l = 0; l < w.icl.size(); ++l) {
        const std::string p = "icl." + std::to_string(l);
        fn(p + ".norm_attn", w.icl[l].norm_attn);
        fn(p + ".norm_kv", w.icl[l].norm_kv);
        fn(p + ".wq", w.icl[l].wq);
        fn(p + ".wk", w.icl[l].wk);
        fn(p + ".wv", w.icl[l].wv);
        fn(p + ".wk_test", w.icl[l].wk_test);
        fn(p + ".wv_test", w.icl[l].wv_test);
        fn(p + ".wo", w.icl[l].wo);
        for_each_in_qass(p + ".qass", w.icl[l].qass, fn);
        fn(p + ".norm_ffn", w.icl[l].norm_ffn);
        fn(p + ".ffn_w1", w.icl[l].ffn_w1);
        fn(p + ".ffn_b1", w.icl[l].ffn_b1);
        fn(p + ".ffn_w2", w.icl[l].ffn_w2);
        fn(p + ".ffn_b2", w.icl[l].ffn_b2);
    }
    fn("icl.norm", w.icl_norm);
    fn("dec.wq", w.dec_wq);
    fn("dec.wk", w.dec_wk);
    for_each_in_qass("dec.qass", w.dec_qass, fn);
    fn("head.w1", w.head_w1);
    fn("head.b1", w.head_b1);
    fn("head.w2", w.head_w2);
    fn("head.b2", w.head_b2);
}

template void for_each_tensor<float>(
    ModelWeightsT<float>&, const std::function<void(const std::string&, TensorT<float>&)>&);
template void for_each_tensor<double>(
    ModelWeightsT<double>&, const std::function<void(const std::string&, TensorT<double>&)>&);

ModelWeightsT<double> widen(const ModelWeights& w) {
    ModelWeightsT<double> out;
    auto& src = const_cast<ModelWeights&>(w);
    std::map<std::string, const Tensor*> named;
    for_each_tensor<float>(src, [&](const std::string& name, Tensor& t) { named[name] = &t; });

    // Mirror the float skeleton, then copy payloads by name.
    out.stage1.resize(w.stage1.size());
    out.stage2.resize(w.stage2.size());
    out.icl.resize(w.icl.size());
    for (std::size_t b = 0; b < w.stage2.size(); ++b) {
        if (w.stage2[b].has_qass()) out.stage2[b].qass.w1 = DTensor({1});
    }
    for (std::size_t b = 0; b < w.stage1.size(); ++b) {
        if (w.stage1[b].ind.has_qass()) out.stage1[b].ind.qass.w1 = DTensor({1});
        if (w.stage1[b].row.has_qass()) out.stage1[b].row.qass.w1 = DTensor({1});
    }
    for_each_tensor<double>(out, [&](const std::string& name, DTensor& t) {
        const auto it = named.find(name);
        if (it == named.end()) throw IoError("widen: missing tensor " + name);
        const Tensor& s = *it->second;
        t = DTensor(s.shape());
        for (std::size_t i = 0; i < s.numel(); ++i) t(i) = static_cast<double>(s(i));
    });
    return out;
}

void save_weights(const std::string& path, const ModelConfig& cfg, const ModelWeights& w) {
    auto& mutable_w = const_cast<ModelWeights&>(w);
    std::vector<std::pair<std::string, Tensor*>> records;
    for_each_tensor<float>(mutable_w,
                           [&](const std::string& name, Tensor& t) { records.emplace_back(name, &t); });

    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, cfg.hash());
    put_u64(out, records.size());
    for (const auto& [name, tensor] : records) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        out.push_back(0);  // dtype tag: f32
        out.push_back(static_cast<char>(tensor->rank()));
        for (std::size_t dim : tensor->shape()) put_u64(out, dim);
        const auto* bytes = reinterpret_cast<const char*>(tensor->data());
        out.append(bytes, tensor->numel() * sizeof(float));
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path);
}

ModelWeights load_weights(const std::string& path, const ModelConfig& cfg) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
        if (pos + n > buf.size()) throw IoError("TPF3: truncated file");
    };
    auto u32 = [&]() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        return v;
    };
    auto u64 = [&]() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++])) << (8 * i);
        return v;
    };

    need(4);
    if (std::memcmp(buf.data(), kMagic, 4) != 0) throw IoError("TPF3: bad magic");
    pos = 4;
    if (u32() != kVersion) throw IoError("TPF3: unsupported version");
    if (u64() != cfg.hash()) throw IoError("TPF3: config hash mismatch");
    const std::uint64_t n_records = u64();

    ModelWeights w = init_weights(cfg, 0);
    std::map<std::string, Tensor*> expected;
    for_each_tensor<float>(w, [&](const std::string& name, Tensor& t) { expected[name] = &t; });
    std::size_t filled = 0;

    for (std::uint64_t r = 0; r < n_records; ++r) {
        const std::uint32_t name_len = u32();
        need(name_len);
        const std::string name = buf.substr(pos, name_len);
        pos += name_len;
        need(2);
        const std::uint8_t dtype = static_cast<std::uint8_t>(buf[pos++]);
        const std::uint8_t rank = static_cast<std::uint8_t>(buf[pos++]);
        if (dtype != 0) throw IoError("TPF3: unsupported dtype for " + name);
        std::vector<std::size_t> shape(rank);
        for (auto& dim : shape) dim = u64();

        const auto it = expected.find(name);
        if (it == expected.end()) throw IoError("TPF3: unexpected tensor " + name);
        if (it->second->shape() != shape) throw IoError("TPF3: shape mismatch for " + name);
        const std::size_t n_bytes = it->second->numel() * sizeof(float);
        need(n_bytes);
        std::memcpy(it->second->data(), buf.data() + pos, n_bytes);
        pos += n_bytes;
        ++filled;
    }
    if (pos != buf.size()) throw IoError("TPF3: trailing bytes");
    if (filled != expected.size()) throw IoError("TPF3: missing tensors");
    return w;
}

}  // namespace tfe::model
