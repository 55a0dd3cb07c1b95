#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tfopt/linalg.hpp"
#include "tfopt/relu_approx.hpp"

namespace tfopt {

struct AttentionHead {
    DenseMatrix w_v;
    DenseMatrix w_k;
    DenseMatrix w_q;
};

struct FeedForward {
    DenseMatrix w1;  // N x D
    DenseMatrix w2;  // D x N
    std::size_t width() const { return w1.rows(); }
};

struct TransformerLayer {
    std::vector<AttentionHead> heads;
    std::optional<FeedForward> ffn;

    std::size_t dim() const { return heads.empty() ? (ffn ? ffn->w1.cols() : 0) : heads.front().w_v.rows(); }
};

using Model = std::vector<TransformerLayer>;

inline void validate_layer(const TransformerLayer& layer) {
    if (layer.heads.empty()) throw ShapeError("TransformerLayer: needs at least one head");
    const std::size_t d = layer.heads.front().w_v.rows();
    for (const auto& h : layer.heads)
        for (const DenseMatrix* w : {&h.w_v, &h.w_k, &h.w_q})
            if (w->rows() != d || w->cols() != d)
                throw ShapeError("AttentionHead: weights must all be " + std::to_string(d) + "x" + std::to_string(d) +
                                 ", got " + shape_str(*w));
    if (layer.ffn) {
        const auto& f = *layer.ffn;
        if (f.w1.rows() < 1 || f.w1.cols() != d || f.w2.rows() != d || f.w2.cols() != f.w1.rows())
            throw ShapeError("FeedForward: expected W1 Nx" + std::to_string(d) + " and W2 " + std::to_string(d) +
                             "xN, got " + shape_str(f.w1) + " and " + shape_str(f.w2));
    }
}

// H + sum_i W_V H (W_K H)^T (W_Q H)
inline DenseMatrix attention_forward(const TransformerLayer& layer, const DenseMatrix& h) {
    validate_layer(layer);
    if (h.rows() != layer.dim())
        throw ShapeError("attention_forward: prompt has " + std::to_string(h.rows()) + " rows, layer expects " +
                         std::to_string(layer.dim()));
    DenseMatrix out = h;
    for (const auto& head : layer.heads) {
        const DenseMatrix vh = matmul(head.w_v, h);
        const DenseMatrix kh = matmul(head.w_k, h);
        const DenseMatrix qh = matmul(head.w_q, h);
        out += matmul(vh, matmul(kh.transpose(), qh));
    }
    require_finite(out, "attention_forward");
    return out;
}

// h + W2 relu(W1 h), column by column. Without an ffn this is the identity.
inline DenseMatrix ffn_forward(const TransformerLayer& layer, const DenseMatrix& h) {
    if (!layer.ffn) return h;
    const auto& f = *layer.ffn;
    if (h.rows() != f.w1.cols())
        throw ShapeError("ffn_forward: prompt has " + std::to_string(h.rows()) + " rows, W1 expects " +
                         std::to_string(f.w1.cols()));
    DenseMatrix z = matmul(f.w1, h);
    for (double& v : z.data()) v = relu(v);
    DenseMatrix out = h;
    out += matmul(f.w2, z);
    require_finite(out, "ffn_forward");
    return out;
}

enum class Stage { attention, ffn };

using LayerObserver = std::function<void(std::size_t layer, Stage stage, const DenseMatrix& h)>;

inline DenseMatrix model_forward(const Model& layers, const DenseMatrix& h0, const LayerObserver& observe = {}) {
    DenseMatrix h = h0;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        try {
            h = attention_forward(layers[i], h);
            if (observe) observe(i, Stage::attention, h);
            h = ffn_forward(layers[i], h);
            if (observe) observe(i, Stage::ffn, h);
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(i) + ": " + e.what());
        }
    }
    return h;
}

// --- prompt layout ---

enum class BlockRole { identity_pad, data_matrix, labels, iterate, scratch, ones, constant };

inline const char* role_name(BlockRole r) {
    switch (r) {
        case BlockRole::identity_pad: return "identity_pad";
        case BlockRole::data_matrix: return "data_matrix";
        case BlockRole::labels: return "labels";
        case BlockRole::iterate: return "iterate";
        case BlockRole::scratch: return "scratch";
        case BlockRole::ones: return "ones";
        case BlockRole::constant: return "constant";
    }
    return "?";
}

struct Block {
    std::string name;
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
    BlockRole role = BlockRole::scratch;
    std::size_t rows() const { return end - begin; }
};

class PromptLayout {
public:
    PromptLayout& add(std::string name, std::size_t rows, BlockRole role) {
        if (rows == 0) throw LayoutError("PromptLayout: block '" + name + "' has zero rows");
        for (const auto& b : blocks_)
            if (b.name == name) throw LayoutError("PromptLayout: duplicate block '" + name + "'");
        const std::size_t start = dim();
        blocks_.push_back({std::move(name), start, start + rows, role});
        return *this;
    }

    std::size_t dim() const { return blocks_.empty() ? 0 : blocks_.back().end; }
    const std::vector<Block>& blocks() const { return blocks_; }

    const Block& block(const std::string& name) const {
        for (const auto& b : blocks_)
            if (b.name == name) return b;
        throw LayoutError("PromptLayout: no block named '" + name + "'");
    }

    std::size_t row(const std::string& name, std::size_t offset = 0) const {
        const Block& b = block(name);
        if (offset >= b.rows())
            throw LayoutError("PromptLayout: row " + std::to_string(offset) + " outside block '" + name + "'");
        return b.begin + offset;
    }

    void validate() const {
        std::size_t next = 0;
        for (const auto& b : blocks_) {
            if (b.begin != next || b.end <= b.begin)
                throw LayoutError("PromptLayout: block '" + b.name + "' breaks contiguity");
            next = b.end;
        }
    }

    DenseMatrix extract(const DenseMatrix& h, const std::string& name) const {
        check_rows(h);
        const Block& b = block(name);
        return h.block(b.begin, 0, b.rows(), h.cols());
    }

    // Writes content into the block, zero-padding columns on the right.
    void place(DenseMatrix& h, const std::string& name, const DenseMatrix& content) const {
        check_rows(h);
        const Block& b = block(name);
        if (content.rows() != b.rows() || content.cols() > h.cols())
            throw LayoutError("PromptLayout: block '" + name + "' expects " + std::to_string(b.rows()) +
                              " rows and at most " + std::to_string(h.cols()) + " cols, got " + shape_str(content));
        for (std::size_t i = 0; i < b.rows(); ++i)
            for (std::size_t j = 0; j < h.cols(); ++j) h(b.begin + i, j) = j < content.cols() ? content(i, j) : 0.0;
    }

    std::string describe() const {
        std::ostringstream os;
        for (const auto& b : blocks_)
            os << b.name << " [" << b.begin << ',' << b.end << ") " << role_name(b.role) << '\n';
        return os.str();
    }

private:
    void check_rows(const DenseMatrix& h) const {
        if (h.rows() != dim())
            throw LayoutError("PromptLayout: prompt has " + std::to_string(h.rows()) + " rows, layout has " +
                              std::to_string(dim()));
    }

    std::vector<Block> blocks_;
};

// --- weight assembly helpers ---

// One block-copy term: rows [dst, dst+count) receive scale * rows [src, src+count).
struct Copy {
    std::size_t dst;
    std::size_t src;
    std::size_t count;
    double scale = 1.0;
};

inline DenseMatrix selector(std::size_t dim, std::initializer_list<Copy> terms) {
    DenseMatrix m(dim, dim);
    for (const auto& t : terms) {
        if (t.dst + t.count > dim || t.src + t.count > dim) throw LayoutError("selector: copy outside embedding");
        for (std::size_t i = 0; i < t.count; ++i) m(t.dst + i, t.src + i) += t.scale;
    }
    return m;
}

// Collects ReLU neurons row by row; every neuron reads a sparse combination
// of prompt rows and writes a sparse combination back.
class FfnBuilder {
public:
    using Terms = std::vector<std::pair<std::size_t, double>>;

    FfnBuilder(std::size_t dim, std::size_t ones_row) : dim_(dim), ones_row_(ones_row) {}

    void add_neuron(const Terms& in, const Terms& out) {
        for (const auto& [r, c] : in)
            if (r >= dim_) throw LayoutError("FfnBuilder: input row outside embedding");
        for (const auto& [r, c] : out)
            if (r >= dim_) throw LayoutError("FfnBuilder: output row outside embedding");
        in_.push_back(in);
        out_.push_back(out);
    }

    // Adds scale * pwl(sum in) to out_row. Biases come from the ones row.
    void add_pwl(const Terms& in, const PwlApprox& pwl, std::size_t out_row, double scale) {
        const ReluExpansion e = relu_expansion(pwl);
        if (e.bias != 0.0) add_neuron({{ones_row_, 1.0}}, {{out_row, scale * e.bias}});
        for (std::size_t k = 0; k < e.knots.size(); ++k) {
            if (e.coefs[k] == 0.0) continue;
            Terms t = in;
            t.emplace_back(ones_row_, -e.knots[k]);
            add_neuron(t, {{out_row, scale * e.coefs[k]}});
        }
        if (e.left_slope != 0.0) {
            Terms t;
            for (const auto& [r, c] : in) t.emplace_back(r, -c);
            t.emplace_back(ones_row_, e.knots.front());
            add_neuron(t, {{out_row, -scale * e.left_slope}});
        }
    }

    // Adds -(row) to out_row via relu(v) - relu(-v), exact for any v.
    void add_erase(std::size_t row) {
        add_neuron({{row, 1.0}}, {{row, -1.0}});
        add_neuron({{row, -1.0}}, {{row, 1.0}});
    }

    std::size_t width() const { return in_.size(); }

    FeedForward build() const {
        if (in_.empty()) throw ShapeError("FfnBuilder: no neurons");
        FeedForward f{DenseMatrix(in_.size(), dim_), DenseMatrix(dim_, in_.size())};
        for (std::size_t k = 0; k < in_.size(); ++k) {
            for (const auto& [r, c] : in_[k]) f.w1(k, r) += c;
            for (const auto& [r, c] : out_[k]) f.w2(r, k) += c;
        }
        return f;
    }

private:
    std::size_t dim_;
    std::size_t ones_row_;
    std::vector<Terms> in_;
    std::vector<Terms> out_;
};

// --- serialization ---

inline void save_model(const std::string& dir, const Model& model) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream man(fs::path(dir) / "manifest.txt", std::ios::binary);
    if (!man) throw IoError("save_model: cannot write manifest in " + dir);
    const std::size_t dim = model.empty() ? 0 : model.front().dim();
    man << "tfopt-model 1\n" << "dim " << dim << '\n' << "layers " << model.size() << '\n';
    for (std::size_t i = 0; i < model.size(); ++i) {
        const auto& L = model[i];
        man << "layer " << i << " heads " << L.heads.size() << " ffn_width " << (L.ffn ? L.ffn->width() : 0) << '\n';
        for (std::size_t j = 0; j < L.heads.size(); ++j) {
            const std::string stem = "L" + std::to_string(i) + "_H" + std::to_string(j);
            save_csv((fs::path(dir) / (stem + "_V.csv")).string(), L.heads[j].w_v);
            save_csv((fs::path(dir) / (stem + "_K.csv")).string(), L.heads[j].w_k);
            save_csv((fs::path(dir) / (stem + "_Q.csv")).string(), L.heads[j].w_q);
            man << "head " << i << ' ' << j << ' ' << stem << "_V.csv " << stem << "_K.csv " << stem << "_Q.csv\n";
        }
        if (L.ffn) {
            const std::string stem = "L" + std::to_string(i);
            save_csv((fs::path(dir) / (stem + "_W1.csv")).string(), L.ffn->w1);
            save_csv((fs::path(dir) / (stem + "_W2.csv")).string(), L.ffn->w2);
            man << "ffn " << i << ' ' << stem << "_W1.csv " << stem << "_W2.csv " << L.ffn->width() << '\n';
        }
    }
    if (!man) throw IoError("save_model: manifest write failed");
}

inline Model load_model(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream man(fs::path(dir) / "manifest.txt", std::ios::binary);
    if (!man) throw IoError("load_model: no manifest in " + dir);
    auto path = [&](const std::string& f) { return (fs::path(dir) / f).string(); };
    std::string line, tag;
    std::getline(man, line);
    if (line.rfind("tfopt-model", 0) != 0) throw IoError("load_model: bad manifest header");
    Model model;
    while (std::getline(man, line)) {
        std::istringstream ls(line);
        ls >> tag;
        if (tag == "layers") {
            std::size_t n = 0;
            ls >> n;
            model.resize(n);
        } else if (tag == "head") {
            std::size_t i = 0, j = 0;
            std::string v, k, q;
            ls >> i >> j >> v >> k >> q;
            if (i >= model.size()) throw IoError("load_model: head for unknown layer");
            if (model[i].heads.size() != j) throw IoError("load_model: heads out of order");
            model[i].heads.push_back({load_csv(path(v)), load_csv(path(k)), load_csv(path(q))});
        } else if (tag == "ffn") {
            std::size_t i = 0, width = 0;
            std::string w1, w2;
            ls >> i >> w1 >> w2 >> width;
            if (i >= model.size()) throw IoError("load_model: ffn for unknown layer");
            model[i].ffn = FeedForward{load_csv(path(w1)), load_csv(path(w2))};
            if (model[i].ffn->width() != width) throw IoError("load_model: ffn width mismatch");
        }
    }
    for (const auto& L : model) validate_layer(L);
    return model;
}

}  // namespace tfopt
