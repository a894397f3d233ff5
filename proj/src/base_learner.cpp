#include "zsml/base_learner.hpp"

#include "zsml/errors.hpp"
#include "zsml/hash.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace zsml {

std::string to_string(HeadKind k) { return k == HeadKind::linear ? "linear" : "sigmoid"; }

std::string to_string(RegKind k) {
    switch (k) {
    case RegKind::l1: return "l1";
    case RegKind::l2: return "l2";
    case RegKind::both: return "both";
    }
    return "?";
}

HeadKind head_kind_from_string(const std::string& s) {
    if (s == "linear") return HeadKind::linear;
    if (s == "sigmoid") return HeadKind::sigmoid;
    throw ConfigError("unknown head kind '" + s + "'");
}

RegKind reg_kind_from_string(const std::string& s) {
    if (s == "l1") return RegKind::l1;
    if (s == "l2") return RegKind::l2;
    if (s == "both") return RegKind::both;
    throw ConfigError("unknown regularization kind '" + s + "'");
}

Regularization BaseLearnerConfig::regularization() const {
    Regularization r;
    if (reg_kind == RegKind::l1 || reg_kind == RegKind::both) r.l1 = reg_strength;
    if (reg_kind == RegKind::l2 || reg_kind == RegKind::both) r.l2 = reg_strength;
    return r;
}

void BaseLearnerConfig::validate() const {
    if (n_layers < 1) throw ConfigError("base: n_layers must be at least 1");
    if (hidden_dim < 1) throw ConfigError("base: hidden_dim must be at least 1");
    if (embedding_dim < 1) throw ConfigError("base: embedding_dim must be at least 1");
    check_dropout_rate(dropout_rate);
    if (!(reg_strength >= 0.0)) throw ConfigError("base: reg_strength must be non-negative");
    if (!(learning_rate >= 0.0)) throw ConfigError("base: learning_rate must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("base: momentum must lie in [0, 1)");
    if (inner_iterations < 0) throw ConfigError("base: inner_iterations must be non-negative");
    if (!(embedding_init_scale >= 0.0)) throw ConfigError("base: embedding_init_scale must be non-negative");
}

std::vector<std::string> BaseLearnerConfig::off_grid() const {
    std::vector<std::string> out;
    auto in = [](auto v, std::initializer_list<decltype(v)> grid) {
        return std::find(grid.begin(), grid.end(), v) != grid.end();
    };
    if (!in(n_layers, {2, 4, 6, 8})) out.push_back("n_layers");
    if (!in(hidden_dim, {8, 16, 32, 64, 128})) out.push_back("hidden_dim");
    if (!in(embedding_dim, {8, 16, 32, 64, 128})) out.push_back("embedding_dim");
    if (activation == Activation::identity) out.push_back("activation");
    if (!in(dropout_rate, {0.05, 0.1, 0.2})) out.push_back("dropout_rate");
    if (!in(reg_strength, {1e-2, 1e-3, 1e-4, 1e-5, 1e-6})) out.push_back("reg_strength");
    if (!in(inner_iterations, {1, 2, 5})) out.push_back("inner_iterations");
    return out;
}

nlohmann::json to_json(const BaseLearnerConfig& c) {
    return {{"n_layers", c.n_layers},
            {"hidden_dim", c.hidden_dim},
            {"embedding_dim", c.embedding_dim},
            {"activation", to_string(c.activation)},
            {"dropout_rate", c.dropout_rate},
            {"dropout_every_layer", c.dropout_every_layer},
            {"reg_kind", to_string(c.reg_kind)},
            {"reg_strength", c.reg_strength},
            {"optimizer", to_string(c.optimizer)},
            {"learning_rate", c.learning_rate},
            {"momentum", c.momentum},
            {"inner_iterations", c.inner_iterations},
            {"head_kind", to_string(c.head_kind)},
            {"embedding_init_scale", c.embedding_init_scale}};
}

BaseLearnerConfig base_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("base: expected a JSON object");
    static const std::set<std::string> keys{"n_layers",        "hidden_dim",   "embedding_dim",
                                            "activation",      "dropout_rate", "dropout_every_layer",
                                            "reg_kind",        "reg_strength", "optimizer",
                                            "learning_rate",   "momentum",     "inner_iterations",
                                            "head_kind",       "embedding_init_scale"};
    for (const auto& [key, _] : j.items())
        if (!keys.count(key)) throw ConfigError("base: unknown key '" + key + "'");
    BaseLearnerConfig c;
    try {
        c.n_layers = j.value("n_layers", c.n_layers);
        c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
        c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
        c.activation = activation_from_string(j.value("activation", to_string(c.activation)));
        c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
        c.dropout_every_layer = j.value("dropout_every_layer", c.dropout_every_layer);
        c.reg_kind = reg_kind_from_string(j.value("reg_kind", to_string(c.reg_kind)));
        c.reg_strength = j.value("reg_strength", c.reg_strength);
        c.optimizer = optimizer_from_string(j.value("optimizer", to_string(c.optimizer)));
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.momentum = j.value("momentum", c.momentum);
        c.inner_iterations = j.value("inner_iterations", c.inner_iterations);
        c.head_kind = head_kind_from_string(j.value("head_kind", to_string(c.head_kind)));
        c.embedding_init_scale = j.value("embedding_init_scale", c.embedding_init_scale);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("base: ") + e.what());
    }
    c.validate();
    return c;
}

BaseLearnerWeights init_base_learner(Index input_dim, int group_count, const BaseLearnerConfig& config, Rng& rng) {
    config.validate();
    if (input_dim < 1) throw ShapeError("base learner needs at least one input feature");
    if (group_count < 1) throw ShapeError("base learner needs at least one group");
    BaseLearnerWeights w;
    Index prev = input_dim;
    for (int i = 0; i < config.n_layers; ++i) {
        w.extractor.push_back(DenseLayer<double>::init(prev, config.hidden_dim, config.activation, rng));
        const bool last = i + 1 == config.n_layers;
        w.dropout.push_back(config.dropout_every_layer || last ? config.dropout_rate : 0.0);
        prev = config.hidden_dim;
    }
    std::uniform_real_distribution<double> u(-config.embedding_init_scale, config.embedding_init_scale);
    w.embeddings.resize(group_count, config.embedding_dim);
    for (Index r = 0; r < w.embeddings.rows(); ++r)
        for (Index c = 0; c < w.embeddings.cols(); ++c) w.embeddings(r, c) = u(rng);
    w.head = DenseLayer<double>::init(prev + config.embedding_dim, 1, Activation::identity, rng);
    return w;
}

namespace {

Index total_params(const BaseLearnerWeights& w) {
    Index n = w.embeddings.size() + param_count(w.head);
    for (const auto& l : w.extractor) n += param_count(l);
    return n;
}

std::string extractor_name(std::size_t i) { return "extractor" + std::to_string(i); }

void check_groups(const BaseLearnerWeights& w, const VectorXi& groups, Index rows) {
    if (groups.size() != rows) throw ShapeError("group id count does not match batch rows");
    for (Index i = 0; i < groups.size(); ++i)
        if (groups(i) < 0 || groups(i) >= w.group_count())
            throw ConfigError("unknown group id " + std::to_string(groups(i)));
}

MatrixXd gather_embeddings(const BaseLearnerWeights& w, const VectorXi& groups) {
    MatrixXd out(groups.size(), w.embeddings.cols());
    for (Index i = 0; i < groups.size(); ++i) out.row(i) = w.embeddings.row(groups(i));
    return out;
}

MatrixXd concat(const MatrixXd& a, const MatrixXd& b) {
    MatrixXd out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

} // namespace

FlatParams<double> flatten(const BaseLearnerWeights& w) {
    FlatWriter<double> out(total_params(w));
    for (std::size_t i = 0; i < w.extractor.size(); ++i) put_layer(out, extractor_name(i), w.extractor[i]);
    out.put("embeddings", w.embeddings);
    put_layer(out, "head", w.head);
    return std::move(out).finish();
}

void unflatten(const FlatParams<double>& flat, BaseLearnerWeights& w) {
    FlatReader<double> in(flat);
    for (std::size_t i = 0; i < w.extractor.size(); ++i) get_layer(in, extractor_name(i), w.extractor[i]);
    in.get("embeddings", w.embeddings);
    get_layer(in, "head", w.head);
    in.finish();
}

bool uses_sigmoid(TaskKind kind, const BaseLearnerConfig& config) {
    return kind == TaskKind::classification && config.head_kind == HeadKind::sigmoid;
}

TaskBatch make_batch(const DatasetTable& table, const std::vector<Index>& input_cols, const TaskSpec& task,
                     const std::vector<Index>& rows) {
    const Index col = table.index_of(task.column);
    std::vector<Index> keep;
    for (Index r : rows)
        if (table.observed(r, col)) keep.push_back(r);
    TaskBatch b;
    b.kind = task.kind;
    const auto n = static_cast<Index>(keep.size());
    b.x.resize(n, static_cast<Index>(input_cols.size()));
    b.groups.resize(n);
    b.y.resize(n);
    for (Index i = 0; i < n; ++i) {
        const Index r = keep[static_cast<std::size_t>(i)];
        for (std::size_t c = 0; c < input_cols.size(); ++c) b.x(i, static_cast<Index>(c)) = table.values(r, input_cols[c]);
        b.groups(i) = table.group_ids(r);
        const double v = table.values(r, col);
        b.y(i) = task.kind == TaskKind::classification ? binarize(v) : v;
    }
    return b;
}

TaskBatch make_batch(const DatasetTable& table, const std::vector<Index>& input_cols, const TaskSpec& task) {
    std::vector<Index> rows(static_cast<std::size_t>(table.rows()));
    for (Index i = 0; i < table.rows(); ++i) rows[static_cast<std::size_t>(i)] = i;
    return make_batch(table, input_cols, task, rows);
}

TaskBatch make_inputs(const DatasetTable& table, const std::vector<Index>& input_cols) {
    TaskBatch b;
    b.x.resize(table.rows(), static_cast<Index>(input_cols.size()));
    for (std::size_t c = 0; c < input_cols.size(); ++c) b.x.col(static_cast<Index>(c)) = table.values.col(input_cols[c]);
    b.groups = table.group_ids;
    return b;
}

VectorXd forward(const BaseLearnerWeights& w, const MatrixXd& x, const VectorXi& groups, Mode mode,
                 bool sigmoid_output, Rng& rng) {
    check_groups(w, groups, x.rows());
    MatrixXd h = x;
    for (std::size_t i = 0; i < w.extractor.size(); ++i) {
        h = dense_forward(h, w.extractor[i]);
        h = dropout_apply(h, DropoutSpec{w.dropout[i], mode}, rng);
    }
    VectorXd out = dense_forward(concat(h, gather_embeddings(w, groups)), w.head).col(0);
    if (sigmoid_output) out = out.unaryExpr([](double z) { return sigmoid(z); });
    return out;
}

VectorXd predict(const BaseLearnerWeights& w, const MatrixXd& x, const VectorXi& groups, bool sigmoid_output) {
    Rng unused(0);
    return forward(w, x, groups, Mode::eval, sigmoid_output, unused);
}

BackpropResult<double> base_backprop(const BaseLearnerWeights& w, const TaskBatch& batch,
                                     const BaseLearnerConfig& config, Mode mode, Rng& rng) {
    if (batch.size() == 0) throw ShapeError("backprop: empty batch");
    check_groups(w, batch.groups, batch.size());
    const Regularization reg = config.regularization();

    std::vector<DenseCache<double>> caches;
    std::vector<MatrixXd> masks;
    MatrixXd h = batch.x;
    for (std::size_t i = 0; i < w.extractor.size(); ++i) {
        caches.push_back(dense_forward_cached(h, w.extractor[i]));
        if (!all_finite(caches.back().out))
            throw NumericError("non-finite activation in extractor layer " + std::to_string(i));
        h = caches.back().out;
        if (mode == Mode::train && w.dropout[i] > 0.0) {
            masks.push_back(dropout_mask<double>(h.rows(), h.cols(), w.dropout[i], rng));
            h = h.cwiseProduct(masks.back());
        } else {
            masks.emplace_back();
        }
    }
    const Index hidden = h.cols();
    const DenseCache<double> head_cache = dense_forward_cached(concat(h, gather_embeddings(w, batch.groups)), w.head);
    if (!all_finite(head_cache.out)) throw NumericError("non-finite output in head layer");

    const LossKind loss_kind = uses_sigmoid(batch.kind, config) ? LossKind::binary_cross_entropy : LossKind::mse;
    const MatrixXd target = batch.y;
    auto [loss, d_out] = loss_and_slope<double>(head_cache.out, target, loss_kind);

    auto [head_grad, d_head_in] = dense_backward(w.head, head_cache, d_out);
    loss += penalty(w.head.direction, reg);
    head_grad.direction += penalty_slope(w.head.direction, reg);

    MatrixXd d_emb = MatrixXd::Zero(w.embeddings.rows(), w.embeddings.cols());
    std::vector<bool> used(static_cast<std::size_t>(w.group_count()), false);
    for (Index i = 0; i < batch.size(); ++i) {
        d_emb.row(batch.groups(i)) += d_head_in.row(i).tail(w.embeddings.cols());
        used[static_cast<std::size_t>(batch.groups(i))] = true;
    }
    for (int g = 0; g < w.group_count(); ++g) {
        if (!used[static_cast<std::size_t>(g)]) continue;
        loss += penalty(w.embeddings.row(g), reg);
        d_emb.row(g) += penalty_slope(w.embeddings.row(g), reg);
    }

    std::vector<DenseGrad<double>> grads(w.extractor.size());
    MatrixXd d_h = d_head_in.leftCols(hidden);
    for (std::size_t k = w.extractor.size(); k-- > 0;) {
        if (masks[k].size() != 0) d_h = d_h.cwiseProduct(masks[k]);
        auto [g, d_in] = dense_backward(w.extractor[k], caches[k], d_h);
        loss += penalty(w.extractor[k].direction, reg);
        g.direction += penalty_slope(w.extractor[k].direction, reg);
        grads[k] = std::move(g);
        d_h = std::move(d_in);
    }

    FlatWriter<double> out(total_params(w));
    for (std::size_t i = 0; i < grads.size(); ++i) put_grad(out, extractor_name(i), grads[i]);
    out.put("embeddings", d_emb);
    put_grad(out, "head", head_grad);
    return {loss, std::move(out).finish()};
}

BaseLearnerWeights inner_update(const BaseLearnerWeights& w, const TaskBatch& batch, const BaseLearnerConfig& config,
                                Rng& rng) {
    if (batch.size() == 0) throw DataError("inner update: empty dataset");
    BaseLearnerWeights current = w;
    FlatParams<double> params = flatten(current);
    OptimizerState<double> state;
    state.kind = config.optimizer;
    state.learning_rate = config.learning_rate;
    state.momentum = config.momentum;
    for (int it = 0; it < config.inner_iterations; ++it) {
        const auto result = base_backprop(current, batch, config, Mode::train, rng);
        if (!std::isfinite(result.loss) || !all_finite(result.grads.values))
            throw NumericError("inner update: non-finite loss or gradient at iteration " + std::to_string(it));
        params = optimizer_step(params, result.grads, state);
        unflatten(params, current);
    }
    return current;
}

double task_loss(const BaseLearnerWeights& w, const TaskBatch& batch, const BaseLearnerConfig& config) {
    BaseLearnerConfig plain = config;
    plain.reg_strength = 0.0;
    Rng unused(0);
    return base_backprop(w, batch, plain, Mode::eval, unused).loss;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
    const FlatParams<double> flat = flatten(ckpt.weights);
    nlohmann::json layout = nlohmann::json::array();
    for (const auto& b : flat.layout.blocks) layout.push_back({{"name", b.name}, {"rows", b.rows}, {"cols", b.cols}});
    const nlohmann::json config = to_json(ckpt.config);
    return {{"format", "zsml-checkpoint"},
            {"version", 1},
            {"config", config},
            {"config_hash", ckpt.config_hash.empty() ? config_hash(config) : ckpt.config_hash},
            {"input_dim", ckpt.weights.input_dim()},
            {"group_count", ckpt.weights.group_count()},
            {"dropout", ckpt.weights.dropout},
            {"iteration", ckpt.iteration},
            {"layout", layout},
            {"values", std::vector<double>(flat.values.data(), flat.values.data() + flat.values.size())}};
}

Checkpoint checkpoint_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "zsml-checkpoint") throw ConfigError("checkpoint: unrecognized format");
        if (j.at("version").get<int>() != 1) throw ConfigError("checkpoint: unsupported version");
        Checkpoint ckpt;
        ckpt.config = base_config_from_json(j.at("config"));
        ckpt.config_hash = j.at("config_hash").get<std::string>();
        ckpt.iteration = j.at("iteration").get<long>();
        Rng rng(0);
        ckpt.weights = init_base_learner(j.at("input_dim").get<Index>(), j.at("group_count").get<int>(), ckpt.config, rng);
        ckpt.weights.dropout = j.at("dropout").get<std::vector<double>>();
        FlatParams<double> flat;
        for (const auto& b : j.at("layout"))
            flat.layout.blocks.push_back({b.at("name"), b.at("rows").get<Index>(), b.at("cols").get<Index>()});
        const auto values = j.at("values").get<std::vector<double>>();
        flat.values = Eigen::Map<const VectorXd>(values.data(), static_cast<Index>(values.size()));
        unflatten(flat, ckpt.weights);
        return ckpt;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << checkpoint_to_json(ckpt).dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return checkpoint_from_json(nlohmann::json::parse(ss.str()));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("checkpoint " + path.string() + ": " + e.what());
    }
}

} // namespace zsml
