#pragma once

// Dense building blocks with hand-written backward passes: embeddings, 1-D
// convolution, max-over-time pooling, dense layers, LSTM, dropout, the two
// losses and Adam. Matrices are row-major; sequences are (length x dim).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "chemprot/error.hpp"
#include "chemprot/random.hpp"
#include "chemprot/serialize.hpp"

namespace chemprot::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

inline void require_shape(const Matrix& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
    if (m.rows() != rows || m.cols() != cols) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    }
}

/// A trainable tensor and its accumulated gradient.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter() = default;
    Parameter(std::string n, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

inline double glorot_bound(Eigen::Index fan_in, Eigen::Index fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline void init_uniform(Matrix& m, double bound, Rng& rng) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------
// Vocabulary and embeddings

/// Symbol table with reserved PAD (0) and UNK (1) rows.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocabulary() : Vocabulary(std::vector<std::string>{"<PAD>", "<UNK>"}) {}

    explicit Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
        if (symbols_.size() < 2) throw ValidationError("vocabulary needs PAD and UNK entries");
        for (std::size_t i = 0; i < symbols_.size(); ++i) index_.emplace(symbols_[i], static_cast<int>(i));
    }

    int add(const std::string& symbol) {
        auto [it, inserted] = index_.emplace(symbol, static_cast<int>(symbols_.size()));
        if (inserted) symbols_.push_back(symbol);
        return it->second;
    }

    bool contains(const std::string& symbol) const { return index_.count(symbol) != 0; }

    /// Unknown symbols map to the UNK row.
    int lookup(const std::string& symbol) const {
        auto it = index_.find(symbol);
        return it == index_.end() ? kUnk : it->second;
    }

    int size() const { return static_cast<int>(symbols_.size()); }
    const std::vector<std::string>& symbols() const { return symbols_; }

    friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.symbols_ == b.symbols_; }

private:
    std::vector<std::string> symbols_;
    std::unordered_map<std::string, int> index_;
};

/// Gathers rows of `table` for `indices`.
inline Matrix embed(const Matrix& table, std::span<const int> indices) {
    Matrix out(static_cast<Eigen::Index>(indices.size()), table.cols());
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const int i = indices[r];
        if (i < 0 || i >= table.rows()) throw ShapeError("embedding index out of range");
        out.row(static_cast<Eigen::Index>(r)) = table.row(i);
    }
    return out;
}

inline void embed_backward(std::span<const int> indices, const Matrix& d_out, Matrix& d_table) {
    for (std::size_t r = 0; r < indices.size(); ++r) {
        d_table.row(indices[r]) += d_out.row(static_cast<Eigen::Index>(r));
    }
}

/// Reads `word v1 ... vD` lines into the rows of `table` for words present in
/// `vocab`. A leading word2vec-style "count dim" header line is skipped.
/// Returns the number of vocabulary rows filled.
inline std::size_t load_word_vectors(std::istream& in, const Vocabulary& vocab, Matrix& table) {
    std::string line;
    std::size_t line_no = 0;
    std::size_t filled = 0;
    std::vector<bool> seen(static_cast<std::size_t>(vocab.size()), false);
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ss(line);
        std::string word;
        if (!(ss >> word)) continue;
        std::vector<double> values;
        for (std::string v; ss >> v;) {
            try {
                values.push_back(std::stod(v));
            } catch (const std::exception&) {
                throw ParseError(line_no, "bad vector component '" + v + "'");
            }
        }
        if (line_no == 1 && values.size() == 1) continue;
        if (static_cast<Eigen::Index>(values.size()) != table.cols()) {
            throw ParseError(line_no, "vector has " + std::to_string(values.size()) + " components, expected " +
                                          std::to_string(table.cols()));
        }
        if (!vocab.contains(word)) continue;
        const int row = vocab.lookup(word);
        if (seen[static_cast<std::size_t>(row)]) continue;
        seen[static_cast<std::size_t>(row)] = true;
        for (std::size_t k = 0; k < values.size(); ++k) table(row, static_cast<Eigen::Index>(k)) = values[k];
        ++filled;
    }
    return filled;
}

inline std::size_t load_word_vectors(const std::filesystem::path& path, const Vocabulary& vocab, Matrix& table) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open word vectors " + path.string());
    return load_word_vectors(in, vocab, table);
}

// ---------------------------------------------------------------------------
// Convolution over time

/// x: L x D, filters: (window*D) x F laid out as [offset][input dim], bias
/// 1 x F. Output (L - window + 1) x F, no activation.
inline Matrix conv1d(const Matrix& x, const Matrix& filters, const Matrix& bias, int window) {
    const Eigen::Index len = x.rows();
    const Eigen::Index dim = x.cols();
    if (window < 1 || len < window) {
        throw ShapeError("conv1d: sequence length " + std::to_string(len) + " shorter than window " +
                         std::to_string(window));
    }
    require_shape(filters, window * dim, filters.cols(), "conv1d filters");
    require_shape(bias, 1, filters.cols(), "conv1d bias");
    const Eigen::Index out_len = len - window + 1;
    // Row t of the unfolded input is the contiguous block x[t .. t+window).
    Eigen::Map<const Matrix, 0, Eigen::OuterStride<>> unfolded(x.data(), out_len, window * dim,
                                                               Eigen::OuterStride<>(dim));
    Matrix out = unfolded * filters;
    out.rowwise() += bias.row(0);
    return out;
}

/// Accumulates into d_filters / d_bias and, when given, d_x.
inline void conv1d_backward(const Matrix& x, const Matrix& filters, int window, const Matrix& d_out,
                            Matrix& d_filters, Matrix& d_bias, Matrix* d_x) {
    const Eigen::Index dim = x.cols();
    const Eigen::Index out_len = x.rows() - window + 1;
    require_shape(d_out, out_len, filters.cols(), "conv1d d_out");
    Eigen::Map<const Matrix, 0, Eigen::OuterStride<>> unfolded(x.data(), out_len, window * dim,
                                                               Eigen::OuterStride<>(dim));
    d_filters.noalias() += unfolded.transpose() * d_out;
    d_bias += d_out.colwise().sum();
    if (d_x != nullptr) {
        const Matrix d_unfolded = d_out * filters.transpose();
        for (Eigen::Index t = 0; t < out_len; ++t) {
            Eigen::Map<Eigen::RowVectorXd>(d_x->data() + t * dim, window * dim) += d_unfolded.row(t);
        }
    }
}

inline Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

inline Matrix relu_backward(const Matrix& out, const Matrix& d_out) {
    return (out.array() > 0.0).select(d_out, 0.0);
}

// ---------------------------------------------------------------------------
// Max-over-time pooling

struct Pooled {
    Matrix value;              ///< 1 x D
    std::vector<int> argmax;   ///< source row per column, first on ties
};

inline Pooled max_over_time(const Matrix& x) {
    if (x.rows() < 1) throw ShapeError("max_over_time: empty sequence");
    Pooled p{Matrix(1, x.cols()), std::vector<int>(static_cast<std::size_t>(x.cols()), 0)};
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        Eigen::Index best = 0;
        for (Eigen::Index r = 1; r < x.rows(); ++r) {
            if (x(r, c) > x(best, c)) best = r;
        }
        p.value(0, c) = x(best, c);
        p.argmax[static_cast<std::size_t>(c)] = static_cast<int>(best);
    }
    return p;
}

inline Matrix max_over_time_backward(const Pooled& p, Eigen::Index rows, const Matrix& d_out) {
    Matrix d = Matrix::Zero(rows, d_out.cols());
    for (Eigen::Index c = 0; c < d_out.cols(); ++c) d(p.argmax[static_cast<std::size_t>(c)], c) = d_out(0, c);
    return d;
}

// ---------------------------------------------------------------------------
// Dense

/// x: n x in, weight: in x out, bias: 1 x out.
inline Matrix dense(const Matrix& x, const Matrix& weight, const Matrix& bias) {
    if (x.cols() != weight.rows()) throw ShapeError("dense: input width does not match weight rows");
    Matrix out = x * weight;
    out.rowwise() += bias.row(0);
    return out;
}

inline void dense_backward(const Matrix& x, const Matrix& weight, const Matrix& d_out, Matrix& d_weight,
                           Matrix& d_bias, Matrix* d_x) {
    d_weight.noalias() += x.transpose() * d_out;
    d_bias += d_out.colwise().sum();
    if (d_x != nullptr) d_x->noalias() += d_out * weight.transpose();
}

// ---------------------------------------------------------------------------
// LSTM. Gate blocks in the 4H pre-activation are ordered input, forget,
// output, candidate.

inline double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct LstmStep {
    Matrix x, h_prev, c_prev;
    Matrix gates;  ///< 1 x 4H, post-activation
    Matrix c, tanh_c, h;
};

inline void lstm_activate(const Matrix& z, Eigen::Index hidden, Matrix& gates) {
    gates.resize(1, 4 * hidden);
    for (Eigen::Index k = 0; k < 3 * hidden; ++k) gates(0, k) = sigmoid(z(0, k));
    for (Eigen::Index k = 3 * hidden; k < 4 * hidden; ++k) gates(0, k) = std::tanh(z(0, k));
}

/// One LSTM step. wx: in x 4H, wh: H x 4H, b: 1 x 4H.
inline LstmStep lstm_step(const Matrix& x, const Matrix& h_prev, const Matrix& c_prev, const Matrix& wx,
                          const Matrix& wh, const Matrix& b) {
    const Eigen::Index hidden = wh.rows();
    require_shape(wh, hidden, 4 * hidden, "lstm wh");
    require_shape(wx, x.cols(), 4 * hidden, "lstm wx");
    require_shape(b, 1, 4 * hidden, "lstm bias");
    require_shape(h_prev, 1, hidden, "lstm h_prev");
    require_shape(c_prev, 1, hidden, "lstm c_prev");
    LstmStep s{x, h_prev, c_prev, {}, {}, {}, {}};
    const Matrix z = x * wx + h_prev * wh + b;
    lstm_activate(z, hidden, s.gates);
    const auto i = s.gates.leftCols(hidden).array();
    const auto f = s.gates.middleCols(hidden, hidden).array();
    const auto o = s.gates.middleCols(2 * hidden, hidden).array();
    const auto g = s.gates.rightCols(hidden).array();
    s.c = (f * c_prev.array() + i * g).matrix();
    s.tanh_c = s.c.array().tanh().matrix();
    s.h = (o * s.tanh_c.array()).matrix();
    return s;
}

/// Gradient of the gate pre-activations given dL/dh and dL/dc of this step.
/// Also returns dL/dc_prev through `d_c_prev`.
inline Matrix lstm_gate_gradient(const Matrix& gates, const Matrix& c_prev, const Matrix& tanh_c,
                                 const Matrix& d_h, const Matrix& d_c_in, Matrix& d_c_prev) {
    const Eigen::Index hidden = tanh_c.cols();
    const auto i = gates.leftCols(hidden).array();
    const auto f = gates.middleCols(hidden, hidden).array();
    const auto o = gates.middleCols(2 * hidden, hidden).array();
    const auto g = gates.rightCols(hidden).array();
    const auto tc = tanh_c.array();
    const Eigen::Array<double, 1, Eigen::Dynamic> d_c = d_c_in.array() + d_h.array() * o * (1.0 - tc * tc);
    Matrix dz(1, 4 * hidden);
    dz.leftCols(hidden) = (d_c * g * i * (1.0 - i)).matrix();
    dz.middleCols(hidden, hidden) = (d_c * c_prev.array() * f * (1.0 - f)).matrix();
    dz.middleCols(2 * hidden, hidden) = (d_h.array() * tc * o * (1.0 - o)).matrix();
    dz.rightCols(hidden) = (d_c * i * (1.0 - g * g)).matrix();
    d_c_prev = (d_c * f).matrix();
    return dz;
}

struct LstmStepGrads {
    Matrix d_wx, d_wh, d_b, d_x, d_h_prev, d_c_prev;
};

inline LstmStepGrads lstm_step_backward(const LstmStep& s, const Matrix& wx, const Matrix& wh, const Matrix& d_h,
                                        const Matrix& d_c) {
    LstmStepGrads g;
    const Matrix dz = lstm_gate_gradient(s.gates, s.c_prev, s.tanh_c, d_h, d_c, g.d_c_prev);
    g.d_wx = s.x.transpose() * dz;
    g.d_wh = s.h_prev.transpose() * dz;
    g.d_b = dz;
    g.d_x = dz * wx.transpose();
    g.d_h_prev = dz * wh.transpose();
    return g;
}

/// Weights of one LSTM direction.
struct LstmLayer {
    Parameter wx, wh, b;

    LstmLayer() = default;
    LstmLayer(const std::string& prefix, Eigen::Index input, Eigen::Index hidden)
        : wx(prefix + ".wx", input, 4 * hidden), wh(prefix + ".wh", hidden, 4 * hidden), b(prefix + ".b", 1, 4 * hidden) {}

    Eigen::Index hidden() const { return wh.value.rows(); }

    /// Glorot-uniform weights, forget-gate bias 1.
    void initialize(Rng& rng) {
        const Eigen::Index h = hidden();
        init_uniform(wx.value, glorot_bound(wx.value.rows(), h), rng);
        init_uniform(wh.value, glorot_bound(h, h), rng);
        b.value.setZero();
        b.value.middleCols(h, h).setConstant(1.0);
    }
};

/// Cached forward pass of one direction over a sequence. Row t of every
/// matrix refers to sequence position t.
struct LstmSequence {
    bool reverse = false;
    Matrix mask;      ///< 1 x H recurrent dropout mask, empty when unused
    Matrix h_prev;    ///< L x H, masked previous hidden state fed to wh
    Matrix c_prev;    ///< L x H
    Matrix gates;     ///< L x 4H
    Matrix tanh_c;    ///< L x H
    Matrix h;         ///< L x H output
};

inline LstmSequence lstm_sequence(const Matrix& x, const LstmLayer& layer, bool reverse, const Matrix& mask = {}) {
    const Eigen::Index len = x.rows();
    const Eigen::Index hidden = layer.hidden();
    if (x.cols() != layer.wx.value.rows()) throw ShapeError("lstm: input width does not match wx");
    LstmSequence s;
    s.reverse = reverse;
    s.mask = mask;
    s.h_prev = Matrix::Zero(len, hidden);
    s.c_prev = Matrix::Zero(len, hidden);
    s.gates.resize(len, 4 * hidden);
    s.tanh_c.resize(len, hidden);
    s.h.resize(len, hidden);
    Matrix pre = x * layer.wx.value;
    pre.rowwise() += layer.b.value.row(0);
    Matrix h = Matrix::Zero(1, hidden);
    Matrix c = Matrix::Zero(1, hidden);
    Matrix z(1, 4 * hidden);
    Matrix gates;
    for (Eigen::Index step = 0; step < len; ++step) {
        const Eigen::Index t = reverse ? len - 1 - step : step;
        if (mask.size() != 0) h.array() *= mask.array();
        s.h_prev.row(t) = h;
        s.c_prev.row(t) = c;
        z.noalias() = pre.row(t) + h * layer.wh.value;
        lstm_activate(z, hidden, gates);
        s.gates.row(t) = gates.row(0);
        c = (gates.middleCols(hidden, hidden).array() * c.array() +
             gates.leftCols(hidden).array() * gates.rightCols(hidden).array())
                .matrix();
        s.tanh_c.row(t) = c.array().tanh().matrix();
        h = (gates.middleCols(2 * hidden, hidden).array() * s.tanh_c.row(t).array()).matrix();
        s.h.row(t) = h;
    }
    return s;
}

/// Backpropagates dL/dh (L x H) through one direction; accumulates weight
/// gradients in `layer` and returns dL/dx.
inline Matrix lstm_sequence_backward(const LstmSequence& s, const Matrix& x, LstmLayer& layer, const Matrix& d_h_out) {
    const Eigen::Index len = x.rows();
    const Eigen::Index hidden = layer.hidden();
    Matrix dz_all(len, 4 * hidden);
    Matrix d_h_next = Matrix::Zero(1, hidden);
    Matrix d_c_next = Matrix::Zero(1, hidden);
    Matrix d_c_prev;
    for (Eigen::Index step = len - 1; step >= 0; --step) {
        const Eigen::Index t = s.reverse ? len - 1 - step : step;
        const Matrix d_h = d_h_out.row(t) + d_h_next;
        const Matrix dz = lstm_gate_gradient(s.gates.row(t), s.c_prev.row(t), s.tanh_c.row(t), d_h, d_c_next, d_c_prev);
        dz_all.row(t) = dz.row(0);
        d_c_next = d_c_prev;
        d_h_next.noalias() = dz * layer.wh.value.transpose();
        if (s.mask.size() != 0) d_h_next.array() *= s.mask.array();
    }
    layer.wx.grad.noalias() += x.transpose() * dz_all;
    layer.wh.grad.noalias() += s.h_prev.transpose() * dz_all;
    layer.b.grad += dz_all.colwise().sum();
    return dz_all * layer.wx.value.transpose();
}

struct BiLstm {
    LstmSequence forward;
    LstmSequence backward;
    Matrix output;  ///< L x 2H: forward state then backward state per position
};

inline BiLstm bilstm(const Matrix& x, const LstmLayer& fwd, const LstmLayer& bwd, const Matrix& fwd_mask = {},
                     const Matrix& bwd_mask = {}) {
    BiLstm out{lstm_sequence(x, fwd, false, fwd_mask), lstm_sequence(x, bwd, true, bwd_mask), {}};
    out.output.resize(x.rows(), fwd.hidden() + bwd.hidden());
    out.output << out.forward.h, out.backward.h;
    return out;
}

inline Matrix bilstm_backward(const BiLstm& cache, const Matrix& x, LstmLayer& fwd, LstmLayer& bwd, const Matrix& d_out) {
    const Eigen::Index hf = fwd.hidden();
    Matrix dx = lstm_sequence_backward(cache.forward, x, fwd, d_out.leftCols(hf));
    dx += lstm_sequence_backward(cache.backward, x, bwd, d_out.rightCols(d_out.cols() - hf));
    return dx;
}

// ---------------------------------------------------------------------------
// Losses

struct LossResult {
    double loss = 0.0;
    Matrix grad;  ///< same shape as the scores
};

inline Matrix softmax(const Matrix& logits) {
    const double m = logits.maxCoeff();
    Matrix e = (logits.array() - m).exp().matrix();
    return e / e.sum();
}

/// Cross entropy of softmax(logits) against `gold`.
inline LossResult softmax_ce(const Matrix& logits, int gold) {
    if (logits.rows() != 1 || logits.cols() < 2) throw ShapeError("softmax_ce: need 1 x K logits, K >= 2");
    if (gold < 0 || gold >= logits.cols()) throw ShapeError("softmax_ce: gold class out of range");
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    LossResult r;
    r.loss = lse - logits(0, gold);
    r.grad = softmax(logits);
    r.grad(0, gold) -= 1.0;
    return r;
}

/// log(1 + e^z) without overflow.
inline double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

struct RankingLossParams {
    double gamma = 2.0;
    double margin_positive = 2.5;
    double margin_negative = 0.5;
};

/// Pairwise ranking loss over positive-class scores. `gold` is the positive
/// class index, or nullopt for the negative class, which is modelled by
/// pushing every score below -margin_negative.
inline LossResult ranking_loss(const Matrix& scores, std::optional<int> gold, const RankingLossParams& p = {}) {
    if (scores.rows() != 1 || scores.cols() < 1) throw ShapeError("ranking_loss: need 1 x K scores");
    if (gold && (*gold < 0 || *gold >= scores.cols())) throw ShapeError("ranking_loss: gold class out of range");
    LossResult r{0.0, Matrix::Zero(1, scores.cols())};
    if (gold) {
        const double z = p.gamma * (p.margin_positive - scores(0, *gold));
        r.loss += softplus(z);
        r.grad(0, *gold) -= p.gamma * sigmoid(z);
    }
    // Most violating competitor: highest score among the non-gold classes.
    int competitor = -1;
    for (int k = 0; k < scores.cols(); ++k) {
        if (gold && k == *gold) continue;
        if (competitor < 0 || scores(0, k) > scores(0, competitor)) competitor = k;
    }
    if (competitor >= 0) {
        const double z = p.gamma * (p.margin_negative + scores(0, competitor));
        r.loss += softplus(z);
        r.grad(0, competitor) += p.gamma * sigmoid(z);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Dropout

/// Inverted-dropout mask: entries are 0 with probability `rate`, otherwise
/// 1 / (1 - rate).
inline Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
    Matrix m(rows, cols);
    const double keep = 1.0 / (1.0 - rate);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform() < rate ? 0.0 : keep;
    return m;
}

/// Identity in eval mode or at rate 0. Otherwise applies a fresh mask,
/// stored in `mask` for the backward pass.
inline Matrix dropout(const Matrix& x, double rate, Rng& rng, bool train, Matrix* mask = nullptr) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must be in [0, 1)");
    if (!train || rate == 0.0) {
        if (mask != nullptr) *mask = Matrix::Ones(x.rows(), x.cols());
        return x;
    }
    Matrix m = dropout_mask(x.rows(), x.cols(), rate, rng);
    Matrix out = (x.array() * m.array()).matrix();
    if (mask != nullptr) *mask = std::move(m);
    return out;
}

// ---------------------------------------------------------------------------
// Optimization

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    long step = 0;
    std::vector<Matrix> m;
    std::vector<Matrix> v;
};

/// One bias-corrected Adam step using each parameter's accumulated gradient.
inline void adam_update(std::span<Parameter* const> params, AdamState& state) {
    if (state.m.empty()) {
        for (const Parameter* p : params) {
            state.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
            state.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam: parameter count changed");
    ++state.step;
    const AdamConfig& c = state.config;
    const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() ||
            state.m[k].rows() != p.value.rows() || state.m[k].cols() != p.value.cols()) {
            throw ShapeError("adam: shape mismatch for " + p.name);
        }
        state.m[k] = c.beta1 * state.m[k] + (1.0 - c.beta1) * p.grad;
        state.v[k] = c.beta2 * state.v[k] + (1.0 - c.beta2) * p.grad.cwiseAbs2();
        p.value.array() -= c.lr * (state.m[k].array() / correction1) /
                           ((state.v[k].array() / correction2).sqrt() + c.epsilon);
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_global_norm(std::span<Parameter* const> params, double max_norm) {
    double sq = 0.0;
    for (const Parameter* p : params) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (Parameter* p : params) p->grad *= s;
    }
    return norm;
}

inline void zero_grads(std::span<Parameter* const> params) {
    for (Parameter* p : params) p->zero_grad();
}

inline void scale_grads(std::span<Parameter* const> params, double s) {
    for (Parameter* p : params) p->grad *= s;
}

// ---------------------------------------------------------------------------
// Checkpoint helpers

inline void write_parameter(io::Writer& w, const Parameter& p) {
    w.line("param", p.name, static_cast<long>(p.value.rows()), static_cast<long>(p.value.cols()));
    w.doubles("values", p.value.data(), static_cast<std::size_t>(p.value.size()));
}

inline void read_parameter(io::Reader& r, Parameter& p) {
    r.expect("param");
    const auto name = r.value<std::string>();
    const auto rows = r.value<long>();
    const auto cols = r.value<long>();
    if (name != p.name || rows != p.value.rows() || cols != p.value.cols()) {
        r.fail("parameter " + name + " " + std::to_string(rows) + "x" + std::to_string(cols) +
               " does not match expected " + p.name + " " + std::to_string(p.value.rows()) + "x" +
               std::to_string(p.value.cols()));
    }
    const auto values = r.doubles("values");
    if (static_cast<Eigen::Index>(values.size()) != p.value.size()) r.fail("value count mismatch for " + name);
    std::copy(values.begin(), values.end(), p.value.data());
    p.zero_grad();
}

}  // namespace chemprot::nn
