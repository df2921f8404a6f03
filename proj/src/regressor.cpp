#include "sklaw/model/regressor.hpp"

#include <cmath>
#include <fstream>

#include "sklaw/core/error.hpp"
#include "sklaw/core/rng.hpp"
#include "sklaw/nn/checkpoint.hpp"

namespace sklaw {

using Mat = Eigen::MatrixXd;

void RegressorConfig::validate() const {
    if (hidden < 1) throw ValidationError("hidden must be positive");
    if (!(lambda >= 0.0)) throw ValidationError("lambda must be non-negative");
    if (!(lr > 0.0)) throw ValidationError("lr must be positive");
    if (epochs < 0) throw ValidationError("epochs must be non-negative");
    if (batch < 0) throw ValidationError("batch must be non-negative");
    if (!(irt_d > 0.0)) throw ValidationError("irt_d must be positive");
    if (lr_schedule != "cosine" && lr_schedule != "constant")
        throw ValidationError("lr_schedule must be 'cosine' or 'constant'");
}

double scheduled_lr(const RegressorConfig& config, int epoch_index) {
    if (config.lr_schedule == "constant" || config.epochs <= 0) return config.lr;
    const double t = static_cast<double>(epoch_index) / static_cast<double>(config.epochs);
    const double factor = 0.5 * (1.0 + std::cos(M_PI * std::min(t, 1.0)));
    return config.lr * std::max(factor, 0.01);
}

std::string RegressorConfig::run_label() const {
    return "H" + std::to_string(hidden) + "+R" + (reg ? "1" : "0");
}

Regressor init_regressor(const TrainingDataset& dataset, const RegressorConfig& config) {
    config.validate();
    if (dataset.learners.empty()) throw ValidationError("dataset has no learners");

    Regressor r;
    r.config = config;
    r.layout = make_layout(dataset.schema);
    r.skills = dataset.qmatrix.skills;
    r.learner_ids = dataset.learners;
    r.adam.lr = config.lr;

    const int K = r.layout.total();
    const int m = static_cast<int>(dataset.learners.size());
    if (K < 1) throw ValidationError("feature layout is empty");

    Rng rng(derive_seed(config.seed, "init"));
    r.bn_att = BatchNorm::create(r.store, "bn_att", K);
    for (const std::string& s : r.skills)
        r.att.push_back(Mlp::create(r.store, "att." + s, K, config.hidden, 1, rng));
    for (const std::string& s : r.skills) {
        r.bn_msty.push_back(BatchNorm::create(r.store, "bn_msty." + s, K));
        r.msty.push_back(Mlp::create(r.store, "msty." + s, K, config.hidden, 1, rng));
        r.psi.push_back(r.store.add("psi." + s, Mat::Zero(m, 1)));
    }

    const IrtTable table = irt_from_dataset(dataset);
    r.irt_known = table.known;
    if (table.known) {
        r.irt = table.params;
    } else {
        const int e = dataset.qmatrix.num_exercises();
        // raw values chosen so discrimination starts at 1 and guessing at 0.1
        r.irt_disc_raw = r.store.add("irt.disc_raw", Mat::Constant(e, 1, std::log(std::exp(1.0) - 1.0)));
        r.irt_diff = r.store.add("irt.diff", Mat::Constant(e, 1, 0.5));
        r.irt_guess_raw = r.store.add("irt.guess_raw", Mat::Constant(e, 1, std::log(0.1 / 0.9)));
    }
    return r;
}

TapeForward forward_on_tape(Tape& tape, Regressor& model, const DatasetTensors& tensors,
                            bool train_mode, bool unit_alpha) {
    const int n = tensors.num_rows();
    const int k = static_cast<int>(model.skills.size());
    const FeatureLayout& layout = model.layout;
    if (tensors.sf.cols() != layout.total())
        throw ValidationError("tensor width does not match the model's feature layout");

    TapeForward f;
    const TapeVar sf = tape.leaf(tensors.sf);
    f.z_att = model.bn_att.forward(tape, model.store, sf, train_mode);
    const Mat eblock = tensors.sf.middleCols(layout.e_start(), layout.e_width);
    const Mat ublock = tensors.sf.middleCols(layout.u_start(), layout.u_width);
    const Mat sblock = tensors.sf.middleCols(layout.s_start(), layout.s_width);

    for (int s = 0; s < k; ++s) {
        const TapeVar alpha =
            unit_alpha ? tape.leaf(Mat::Ones(n, 1))
                       : model.att[static_cast<std::size_t>(s)].forward(tape, model.store, f.z_att);
        const TapeVar ee = tape.attention_encode(alpha, eblock, tensors.segments);
        std::vector<TapeVar> parts;
        if (layout.u_width > 0) parts.push_back(tape.leaf(ublock));
        parts.push_back(ee);
        if (layout.s_width > 0) parts.push_back(tape.leaf(sblock));
        const TapeVar omega = tape.concat_cols(parts);
        const TapeVar z_m =
            model.bn_msty[static_cast<std::size_t>(s)].forward(tape, model.store, omega, train_mode);
        const TapeVar delta = model.msty[static_cast<std::size_t>(s)].forward(tape, model.store, z_m);
        const TapeVar base = tape.gather_rows(
            tape.param(model.store, model.psi[static_cast<std::size_t>(s)]), tensors.row_learner);
        f.alpha.push_back(alpha);
        f.ee.push_back(ee);
        f.omega.push_back(omega);
        f.z_msty.push_back(z_m);
        f.phi.push_back(tape.add(base, delta));
    }

    const TapeVar phi_mat = tape.concat_cols(f.phi);                        // n×k
    const TapeVar phi_q = tape.matmul(tape.mul(phi_mat, tape.leaf(tensors.qrows)),
                                      tape.leaf(Mat::Ones(k, 1)));          // n×1

    Eigen::VectorXd qq(n);
    for (int i = 0; i < n; ++i) qq[i] = tensors.qrows.row(i).squaredNorm();

    TapeVar pred;
    if (model.irt_known) {
        Eigen::VectorXd disc(n), beta_term(n), guess(n);
        for (int i = 0; i < n; ++i) {
            const int e = tensors.row_exercise[static_cast<std::size_t>(i)];
            disc[i] = model.irt(e, 0);
            beta_term[i] = model.irt(e, 1) * qq[i];
            guess[i] = model.irt(e, 2);
        }
        const TapeVar z = tape.mul(tape.sub(phi_q, tape.leaf(beta_term)),
                                   tape.leaf(model.config.irt_d * disc));
        pred = tape.add(tape.leaf(guess),
                        tape.mul(tape.sigmoid(z),
                                 tape.leaf((1.0 - guess.array()).matrix().eval())));
    } else {
        const TapeVar disc = tape.softplus(
            tape.gather_rows(tape.param(model.store, model.irt_disc_raw), tensors.row_exercise));
        const TapeVar diff =
            tape.gather_rows(tape.param(model.store, model.irt_diff), tensors.row_exercise);
        const TapeVar guess = tape.sigmoid(
            tape.gather_rows(tape.param(model.store, model.irt_guess_raw), tensors.row_exercise));
        const TapeVar beta_term = tape.mul(diff, tape.leaf(Mat(qq)));
        const TapeVar z =
            tape.scale(tape.mul(tape.sub(phi_q, beta_term), disc), model.config.irt_d);
        pred = tape.add(guess, tape.mul(tape.sigmoid(z),
                                        tape.sub(tape.leaf(Mat::Ones(n, 1)), guess)));
    }
    f.pred = pred;

    f.mae = tape.mean_abs_error(pred, Mat(tensors.scores));
    TapeVar reg_sum = tape.mean_sq_around(f.alpha[0], 1.0);
    for (int s = 1; s < k; ++s) reg_sum = tape.add(reg_sum, tape.mean_sq_around(f.alpha[static_cast<std::size_t>(s)], 1.0));
    f.reg = tape.scale(reg_sum, 1.0 / k);
    f.total = model.config.reg ? tape.add_weighted(f.mae, f.reg, model.config.lambda) : f.mae;
    return f;
}

namespace {

// Slice out a contiguous learner block [u0, u1) as its own tensor set.
DatasetTensors slice_tensors(const DatasetTensors& full, int u0, int u1) {
    const int row0 = full.segments[static_cast<std::size_t>(u0)].first;
    const auto& last = full.segments[static_cast<std::size_t>(u1 - 1)];
    const int rows = last.first + last.second - row0;
    DatasetTensors t;
    t.sf = full.sf.middleRows(row0, rows);
    t.qrows = full.qrows.middleRows(row0, rows);
    t.scores = full.scores.segment(row0, rows);
    for (int u = u0; u < u1; ++u) {
        const auto& seg = full.segments[static_cast<std::size_t>(u)];
        t.segments.emplace_back(seg.first - row0, seg.second);
    }
    t.row_learner.assign(full.row_learner.begin() + row0, full.row_learner.begin() + row0 + rows);
    t.row_exercise.assign(full.row_exercise.begin() + row0,
                          full.row_exercise.begin() + row0 + rows);
    return t;
}

void check_dataset_matches(const Regressor& model, const TrainingDataset& dataset) {
    if (dataset.learners != model.learner_ids)
        throw ValidationError("dataset learners do not match the trained model");
    if (dataset.qmatrix.skills != model.skills)
        throw ValidationError("dataset skills do not match the trained model");
}

}  // namespace

void train_more(Regressor& model, const TrainingDataset& dataset, int epochs) {
    check_dataset_matches(model, dataset);
    const DatasetTensors full = build_tensors(dataset, model.layout);
    const int num_learners = static_cast<int>(model.learner_ids.size());
    const int block = model.config.batch > 0 ? model.config.batch : num_learners;

    std::vector<DatasetTensors> batches;
    if (block >= num_learners) {
        batches.push_back(full);
    } else {
        for (int u0 = 0; u0 < num_learners; u0 += block)
            batches.push_back(slice_tensors(full, u0, std::min(u0 + block, num_learners)));
    }
    const double total_rows = static_cast<double>(full.num_rows());

    for (int it = 0; it < epochs; ++it) {
        const int epoch = static_cast<int>(model.curves.size()) + 1;
        model.adam.lr = scheduled_lr(model.config, epoch - 1);
        double mae_acc = 0.0, reg_acc = 0.0;
        for (const DatasetTensors& batch : batches) {
            Tape tape;
            model.store.zero_grads();
            const TapeForward f = forward_on_tape(tape, model, batch, true);
            tape.backward(f.total);
            try {
                model.store.check_finite_grads();
            } catch (const Error& e) {
                throw Error("training diverged at epoch " + std::to_string(epoch) + ": " +
                            e.what());
            }
            model.adam.step(model.store);
            mae_acc += tape.value(f.mae)(0, 0) * batch.num_rows();
            reg_acc += tape.value(f.reg)(0, 0) * batch.num_rows();
        }
        const double mae = mae_acc / total_rows;
        const double reg = reg_acc / total_rows;
        if (!std::isfinite(mae) || !std::isfinite(reg))
            throw Error("training diverged at epoch " + std::to_string(epoch));
        model.curves.push_back({epoch, mae, reg});
        model.final_mae = mae;
        model.final_reg = reg;
    }
}

Regressor train_regressor(const TrainingDataset& dataset, const RegressorConfig& config) {
    Regressor model = init_regressor(dataset, config);
    train_more(model, dataset, config.epochs);
    return model;
}

ForwardPass forward_pass(Regressor& model, const TrainingDataset& dataset, bool train_mode,
                         bool unit_alpha) {
    check_dataset_matches(model, dataset);
    const DatasetTensors tensors = build_tensors(dataset, model.layout);
    Tape tape;
    const TapeForward f = forward_on_tape(tape, model, tensors, train_mode, unit_alpha);
    const int n = tensors.num_rows();
    const int k = static_cast<int>(model.skills.size());
    ForwardPass out;
    out.alpha.resize(n, k);
    out.phi.resize(n, k);
    for (int s = 0; s < k; ++s) {
        out.alpha.col(s) = tape.value(f.alpha[static_cast<std::size_t>(s)]);
        out.phi.col(s) = tape.value(f.phi[static_cast<std::size_t>(s)]);
    }
    out.pred = tape.value(f.pred);
    out.mae = tape.value(f.mae)(0, 0);
    out.reg = tape.value(f.reg)(0, 0);
    return out;
}

double predict_score_3pl(double mastery_dot_q, double beta_term, double discrimination,
                         double guessing, double d) {
    if (!(guessing >= 0.0 && guessing < 1.0))
        throw ValidationError("guessing must lie in [0,1)");
    if (!(discrimination > 0.0)) throw ValidationError("discrimination must be positive");
    if (!(d > 0.0)) throw ValidationError("d must be positive");
    const double z = d * discrimination * (mastery_dot_q - beta_term);
    const double value = guessing + (1.0 - guessing) / (1.0 + std::exp(-z));
    if (!std::isfinite(value)) throw Error("score prediction is non-finite");
    return value;
}

namespace {

nlohmann::json config_to_json(const RegressorConfig& c) {
    return {{"hidden", c.hidden}, {"reg", c.reg},       {"lambda", c.lambda},
            {"lr", c.lr},         {"epochs", c.epochs}, {"batch", c.batch},
            {"seed", c.seed},     {"irt_d", c.irt_d},   {"lr_schedule", c.lr_schedule}};
}

RegressorConfig config_from_json(const nlohmann::json& j) {
    RegressorConfig c;
    c.hidden = j.at("hidden").get<int>();
    c.reg = j.at("reg").get<bool>();
    c.lambda = j.at("lambda").get<double>();
    c.lr = j.at("lr").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch = j.at("batch").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.irt_d = j.at("irt_d").get<double>();
    c.lr_schedule = j.at("lr_schedule").get<std::string>();
    return c;
}

}  // namespace

void save_regressor(const Regressor& model, const std::string& path) {
    Checkpoint ckpt;
    ckpt.meta = {{"config", config_to_json(model.config)},
                 {"skills", model.skills},
                 {"learner_ids", model.learner_ids},
                 {"layout",
                  {{"names", model.layout.names},
                   {"u_width", model.layout.u_width},
                   {"e_width", model.layout.e_width},
                   {"s_width", model.layout.s_width}}},
                 {"irt_known", model.irt_known},
                 {"final_mae", model.final_mae},
                 {"final_reg", model.final_reg},
                 {"curves", curves_to_json(model.curves)}};
    for (std::size_t i = 0; i < model.store.size(); ++i) {
        const auto& entry = model.store.entry(static_cast<int>(i));
        ckpt.add(entry.name, entry.value);
    }
    ckpt.add("buffers.bn_att.rm", model.bn_att.running_mean);
    ckpt.add("buffers.bn_att.rv", model.bn_att.running_var);
    for (std::size_t s = 0; s < model.skills.size(); ++s) {
        ckpt.add("buffers.bn_msty." + model.skills[s] + ".rm", model.bn_msty[s].running_mean);
        ckpt.add("buffers.bn_msty." + model.skills[s] + ".rv", model.bn_msty[s].running_var);
    }
    if (model.irt_known) ckpt.add("irt.table", model.irt);
    save_checkpoint(ckpt, path);
}

Regressor load_regressor(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);
    Regressor r;
    try {
        r.config = config_from_json(ckpt.meta.at("config"));
        r.skills = ckpt.meta.at("skills").get<std::vector<std::string>>();
        r.learner_ids = ckpt.meta.at("learner_ids").get<std::vector<std::string>>();
        const auto& lj = ckpt.meta.at("layout");
        r.layout.names = lj.at("names").get<std::vector<std::string>>();
        r.layout.u_width = lj.at("u_width").get<int>();
        r.layout.e_width = lj.at("e_width").get<int>();
        r.layout.s_width = lj.at("s_width").get<int>();
        r.irt_known = ckpt.meta.at("irt_known").get<bool>();
        r.final_mae = ckpt.meta.at("final_mae").get<double>();
        r.final_reg = ckpt.meta.at("final_reg").get<double>();
        r.curves = curves_from_json(ckpt.meta.at("curves"));
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("corrupt checkpoint metadata: ") + e.what());
    }
    r.adam.lr = r.config.lr;

    const int K = r.layout.total();
    const int m = static_cast<int>(r.learner_ids.size());
    Rng rng(0);  // placeholder init, overwritten from the checkpoint below
    r.bn_att = BatchNorm::create(r.store, "bn_att", K);
    for (const std::string& s : r.skills)
        r.att.push_back(Mlp::create(r.store, "att." + s, K, r.config.hidden, 1, rng));
    for (const std::string& s : r.skills) {
        r.bn_msty.push_back(BatchNorm::create(r.store, "bn_msty." + s, K));
        r.msty.push_back(Mlp::create(r.store, "msty." + s, K, r.config.hidden, 1, rng));
        r.psi.push_back(r.store.add("psi." + s, Mat::Zero(m, 1)));
    }
    if (!r.irt_known) {
        const Mat& disc = ckpt.get("irt.disc_raw");
        r.irt_disc_raw = r.store.add("irt.disc_raw", disc);
        r.irt_diff = r.store.add("irt.diff", ckpt.get("irt.diff"));
        r.irt_guess_raw = r.store.add("irt.guess_raw", ckpt.get("irt.guess_raw"));
    } else {
        r.irt = ckpt.get("irt.table");
    }

    for (std::size_t i = 0; i < r.store.size(); ++i) {
        auto& entry = r.store.entry(static_cast<int>(i));
        const Mat& stored = ckpt.get(entry.name);
        if (stored.rows() != entry.value.rows() || stored.cols() != entry.value.cols())
            throw ValidationError("checkpoint array '" + entry.name +
                                  "' has an unexpected shape");
        entry.value = stored;
    }
    r.bn_att.running_mean = ckpt.get("buffers.bn_att.rm");
    r.bn_att.running_var = ckpt.get("buffers.bn_att.rv");
    for (std::size_t s = 0; s < r.skills.size(); ++s) {
        r.bn_msty[s].running_mean = ckpt.get("buffers.bn_msty." + r.skills[s] + ".rm");
        r.bn_msty[s].running_var = ckpt.get("buffers.bn_msty." + r.skills[s] + ".rv");
    }
    return r;
}

nlohmann::json curves_to_json(const std::vector<CurvePoint>& curves) {
    nlohmann::json arr = nlohmann::json::array();
    for (const CurvePoint& p : curves)
        arr.push_back({{"epoch", p.epoch}, {"mae", p.mae}, {"reg", p.reg}});
    return arr;
}

std::vector<CurvePoint> curves_from_json(const nlohmann::json& j) {
    std::vector<CurvePoint> curves;
    for (const auto& p : j)
        curves.push_back({p.at("epoch").get<int>(), p.at("mae").get<double>(),
                          p.at("reg").get<double>()});
    return curves;
}

void save_curves(const std::vector<CurvePoint>& curves, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot open file for writing: " + path);
    out << nlohmann::json{{"curves", curves_to_json(curves)}}.dump(2) << '\n';
}

std::vector<CurvePoint> load_curves(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open file: " + path);
    nlohmann::json j;
    try {
        in >> j;
        return curves_from_json(j.at("curves"));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad curves file: ") + e.what(), 0);
    }
}

}  // namespace sklaw
