#include "teethseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace teethseg {

namespace {

Tensor image_to_input(const GrayImage& img) {
    Tensor t({1, 1, img.height, img.width});
    for (std::size_t i = 0; i < img.size(); ++i) t[static_cast<Index>(i)] = img.v[i] / 255.0;
    return t;
}

Tensor stack_batch(const std::vector<Tensor>& items) {
    const Index n = static_cast<Index>(items.size());
    Shape s = items[0].shape;
    s[0] = n;
    Tensor out(s);
    const Index per = items[0].numel();
    for (Index i = 0; i < n; ++i)
        std::copy(items[static_cast<std::size_t>(i)].data.begin(), items[static_cast<std::size_t>(i)].data.end(),
                  out.data.begin() + i * per);
    return out;
}

void validate_sample(const Sample& s, const ModelConfig& c) {
    if (s.image.width != c.input_width || s.image.height != c.input_height)
        fail("trainer: sample '" + s.id + "' extents " + std::to_string(s.image.width) + "x" +
             std::to_string(s.image.height) + " do not match configured " + std::to_string(c.input_width) +
             "x" + std::to_string(c.input_height));
    for (const auto label : s.mask.v)
        if (label >= c.num_classes)
            fail("trainer: sample '" + s.id + "' has label " + std::to_string(label) + " outside 0.." +
                 std::to_string(c.num_classes - 1));
}

std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_log_csv(const std::string& path, const std::vector<EpochRow>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("trainer: cannot write '" + path + "'");
    f << "epoch,lr,train_loss,val_loss,val_dsc,val_ji\n";
    for (const auto& r : rows) {
        char lrbuf[40];
        std::snprintf(lrbuf, sizeof(lrbuf), "%.9g", r.lr);
        f << r.epoch << ',' << lrbuf << ',' << csv_num(r.train_loss) << ',' << csv_num(r.val_loss) << ','
          << csv_num(r.val_dsc) << ',' << csv_num(r.val_ji) << '\n';
    }
}

struct ValScore {
    double loss = 0, dsc = 0, ji = 0;
};

ValScore run_validation(TrainState& st, const std::string& data_dir, const std::vector<std::string>& ids,
                        double loss_eps, LossVariant variant) {
    ValScore out;
    ConfusionCounts counts(st.config.num_classes);
    Rng unused(0);
    for (const auto& id : ids) {
        const Sample s = load_sample(data_dir, id);
        const Tensor x = image_to_input(s.image);
        ModelOutputs y = model_forward(nullptr, st.params, st.config, x, /*train=*/false, unused);
        const Tensor target = encode_one_hot(s.mask, st.config.num_classes);
        out.loss += total_loss(nullptr, y, target, loss_eps, variant)[0];
        counts.add(confusion_counts(argmax_labels(y.main), s.mask, st.config.num_classes));
    }
    out.loss /= static_cast<double>(ids.size());
    const MetricReport rep = metrics_from_counts(counts);
    out.dsc = rep.macro.dsc;
    out.ji = rep.macro.ji;
    return out;
}

}  // namespace

TrainResult train(const ModelConfig& config, const std::string& data_dir, const std::string& out_dir,
                  const TrainOptions& opts, const std::string& resume_from) {
    config.validate();
    if (opts.batch < 1) fail("trainer: batch must be >= 1");
    if (opts.epochs < 0) fail("trainer: epochs must be >= 0");
    if (opts.lr <= 0.0) fail("trainer: lr must be > 0");

    const SplitManifest split = load_split(data_dir);
    if (split.train.empty()) fail("trainer: train split is empty");
    if (opts.epochs > 0 && split.val.empty()) fail("trainer: validation split is empty");
    // surface dataset problems before any weight update
    for (const auto& id : split.train) validate_sample(load_sample(data_dir, id), config);
    for (const auto& id : split.val) validate_sample(load_sample(data_dir, id), config);

    fs::create_directories(out_dir);
    TrainResult res;
    res.last_path = (fs::path(out_dir) / "checkpoint_last.ckpt").string();
    res.best_path = (fs::path(out_dir) / "checkpoint_best.ckpt").string();
    res.log_path = (fs::path(out_dir) / "train_log.csv").string();

    TrainState st;
    Rng run_rng(opts.seed);
    if (!resume_from.empty()) {
        st = load_checkpoint(resume_from);
        if (!(st.config == config))
            fail("trainer: checkpoint config does not match the requested config");
        run_rng.set_state(st.rng_state);
    } else {
        st.config = config;
        st.params = build_model(config, opts.seed);
        st.sched.lr = opts.lr;
        st.seed = opts.seed;
        st.epoch = 0;
    }

    if (opts.epochs == 0 && resume_from.empty()) {
        st.rng_state = run_rng.state_str();
        save_checkpoint(res.last_path, st);
        write_log_csv(res.log_path, {});
        res.state = std::move(st);
        return res;
    }

    for (int epoch = st.epoch; epoch < opts.epochs; ++epoch) {
        const double epoch_lr = st.sched.lr;
        std::vector<std::string> order = split.train;
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            const Index j = run_rng.uniform_index(static_cast<Index>(i + 1));
            std::swap(order[i], order[static_cast<std::size_t>(j)]);
        }

        double train_loss_sum = 0.0;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opts.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(opts.batch));
            std::vector<Tensor> xs, ys;
            std::string batch_ids;
            for (std::size_t i = start; i < end; ++i) {
                const Sample s = load_sample(data_dir, order[i]);
                xs.push_back(image_to_input(s.image));
                ys.push_back(encode_one_hot(s.mask, config.num_classes));
                batch_ids += (batch_ids.empty() ? "" : ",") + order[i];
            }
            const Tensor x = stack_batch(xs);
            const Tensor target = stack_batch(ys);

            Tape tape;
            ModelOutputs out = model_forward(&tape, st.params, config, x, /*train=*/true, run_rng);
            Tensor loss = total_loss(&tape, out, target, opts.loss_eps, opts.loss_variant);
            if (!std::isfinite(loss[0]))
                throw std::runtime_error("trainer: non-finite loss in epoch " + std::to_string(epoch + 1) +
                                         " on batch [" + batch_ids + "]");
            tape.backward(loss);

            std::map<std::string, Tensor> grads;
            for (const auto& name : st.params.trainable_names())
                grads.emplace(name, tape.grad(st.params.value(name)));
            adam_step(st.params, grads, st.opt, st.sched.lr);

            train_loss_sum += loss[0];
            ++steps;
        }

        const ValScore val = run_validation(st, data_dir, split.val, opts.loss_eps, opts.loss_variant);
        const bool improved = val.loss < st.sched.best - st.sched.min_delta;
        st.sched.observe(val.loss);
        st.epoch = epoch + 1;
        st.rng_state = run_rng.state_str();

        EpochRow row;
        row.epoch = epoch + 1;
        row.lr = epoch_lr;
        row.train_loss = steps ? train_loss_sum / steps : 0.0;
        row.val_loss = val.loss;
        row.val_dsc = val.dsc;
        row.val_ji = val.ji;
        res.log.push_back(row);

        save_checkpoint(res.last_path, st);
        if (improved || !fs::exists(res.best_path)) save_checkpoint(res.best_path, st);
    }

    write_log_csv(res.log_path, res.log);
    res.state = std::move(st);
    return res;
}

EvalResult evaluate(TrainState& st, const std::string& data_dir, const std::string& split_name, bool oracle) {
    const SplitManifest split = load_split(data_dir);
    const auto& ids = split_ids(split, split_name);
    if (ids.empty()) fail("evaluate: split '" + split_name + "' is empty");

    EvalResult res;
    res.counts = ConfusionCounts(st.config.num_classes);
    Rng unused(0);
    for (const auto& id : ids) {
        const Sample s = load_sample(data_dir, id);
        if (!oracle) validate_sample(s, st.config);
        LabelMask pred;
        if (oracle) {
            pred = s.mask;
        } else {
            const Tensor x = image_to_input(s.image);
            ModelOutputs y = model_forward(nullptr, st.params, st.config, x, /*train=*/false, unused);
            pred = argmax_labels(y.main);
        }
        res.counts.add(confusion_counts(pred, s.mask, st.config.num_classes));
    }
    res.report = metrics_from_counts(res.counts);
    return res;
}

std::string metrics_csv_row(const std::string& label, const ClassMetrics& m) {
    return label + ',' + csv_num(m.acc) + ',' + csv_num(m.dsc) + ',' + csv_num(m.ji) + ',' +
           csv_num(m.precision) + ',' + csv_num(m.recall) + ',' + csv_num(m.specificity);
}

void write_metrics_csv(const std::string& path, const std::string& label, const MetricReport& report) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("trainer: cannot write '" + path + "'");
    f << "model,acc,dsc,ji,precision,recall,specificity\n";
    f << metrics_csv_row(label, report.macro) << '\n';
    for (std::size_t c = 0; c < report.per_class.size(); ++c)
        f << metrics_csv_row(codebook::class_label(static_cast<int>(c)), report.per_class[c]) << '\n';
}

LabelMask predict_mask(TrainState& st, const GrayImage& image) {
    if (image.width != st.config.input_width || image.height != st.config.input_height)
        fail("predict: image extents " + std::to_string(image.width) + "x" + std::to_string(image.height) +
             " do not match configured " + std::to_string(st.config.input_width) + "x" +
             std::to_string(st.config.input_height));
    Rng unused(0);
    const Tensor x = image_to_input(image);
    ModelOutputs y = model_forward(nullptr, st.params, st.config, x, /*train=*/false, unused);
    return argmax_labels(y.main);
}

}  // namespace teethseg
