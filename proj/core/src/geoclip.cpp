#include "gpsgen/geoclip.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "gpsgen/checkpoint.hpp"
#include "gpsgen/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace gpsgen::geoclip {

using ag::Var;

// ---- config serde ----

json GpsClipConfig::to_json() const {
    return json{{"image_size", image_size},
                {"embed_dim", embed_dim},
                {"tau", tau},
                {"coord_hidden", coord_hidden},
                {"coord_layers", coord_layers},
                {"frequencies", frequencies},
                {"base_channels", base_channels},
                {"steps", steps},
                {"batch_size", batch_size},
                {"lr", lr},
                {"weight_decay", weight_decay},
                {"seed", seed}};
}

GpsClipConfig GpsClipConfig::from_json(const json& j) {
    GpsClipConfig c;
    c.image_size = j.at("image_size");
    c.embed_dim = j.at("embed_dim");
    c.tau = j.at("tau");
    c.coord_hidden = j.at("coord_hidden");
    c.coord_layers = j.at("coord_layers");
    c.frequencies = j.at("frequencies");
    c.base_channels = j.at("base_channels");
    c.steps = j.at("steps");
    c.batch_size = j.at("batch_size");
    c.lr = j.at("lr");
    c.weight_decay = j.at("weight_decay");
    c.seed = j.at("seed");
    return c;
}

json AngleClassifierConfig::to_json() const {
    return json{{"image_size", image_size}, {"base_channels", base_channels},
                {"steps", steps},           {"batch_size", batch_size},
                {"lr", lr},                 {"seed", seed},
                {"holdout_fraction", holdout_fraction}};
}

AngleClassifierConfig AngleClassifierConfig::from_json(const json& j) {
    AngleClassifierConfig c;
    c.image_size = j.at("image_size");
    c.base_channels = j.at("base_channels");
    c.steps = j.at("steps");
    c.batch_size = j.at("batch_size");
    c.lr = j.at("lr");
    c.seed = j.at("seed");
    c.holdout_fraction = j.at("holdout_fraction");
    return c;
}

// ---- shared helpers ----

Var normalize_rows(const Var& x, float eps) {
    Var n2 = ag::sum_rows(ag::square(x));
    Var inv = ag::exp_v(ag::scale(ag::log_v(ag::add_scalar(n2, eps)), -0.5f));
    return ag::scale_rows(x, inv);
}

namespace {

/// 4 stride-2 conv blocks + global mean pool -> [N, 4*base] features.
struct ConvTower {
    std::vector<nn::Conv2d> convs;
    std::vector<nn::GroupNorm> norms;
    int image_size = 0, out_channels = 0;

    ConvTower() = default;
    ConvTower(nn::ParamStore& ps, const std::string& name, int image_size_, int base, Rng& rng)
        : image_size(image_size_) {
        int chans[5] = {3, base, 2 * base, 4 * base, 4 * base};
        for (int i = 0; i < 4; ++i) {
            convs.emplace_back(ps, name + ".conv" + std::to_string(i), chans[i], chans[i + 1], 3, 2,
                               1, rng);
            norms.emplace_back(ps, name + ".gn" + std::to_string(i), chans[i + 1], 4);
        }
        out_channels = chans[4];
    }

    Var operator()(const Tensor& x) const {
        if (x.rank() != 4 || x.dim(1) != image_size || x.dim(2) != image_size || x.dim(3) != 3)
            throw std::invalid_argument("ConvTower: bad input shape " + x.shape_str());
        int n = x.dim(0), hw = image_size;
        Var h = ag::constant(x);
        for (size_t i = 0; i < convs.size(); ++i) {
            h = ag::silu(norms[i](convs[i](h)));
            hw = (hw + 1) / 2;
        }
        Var flat = ag::reshape(h, {n * hw * hw, out_channels});
        return ag::scale(ag::segment_sum_rows(flat, hw * hw), 1.0f / static_cast<float>(hw * hw));
    }
};

Tensor stack_images(const std::vector<Tensor>& images, const std::vector<size_t>& idx) {
    int h = images[0].dim(0), w = images[0].dim(1);
    Tensor x({static_cast<int>(idx.size()), h, w, 3});
    int64_t per = static_cast<int64_t>(h) * w * 3;
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy(images[idx[i]].data.begin(), images[idx[i]].data.end(),
                  x.data.begin() + static_cast<int64_t>(i) * per);
    return x;
}

void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
}

}  // namespace

// ---- GPS-image contrastive model ----

struct GpsClipTowers {
    ConvTower image;
};

GpsClipModel::GpsClipModel(const GpsClipConfig& cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    ConvTower tower(ps_, "img", cfg.image_size, cfg.base_channels, rng);
    convs_ = std::move(tower.convs);
    norms_ = std::move(tower.norms);
    img_proj_ = nn::Linear(ps_, "img.proj", 4 * cfg.base_channels, cfg.embed_dim, rng);

    int in = geo::encode_dim(cfg.frequencies);
    for (int i = 0; i < cfg.coord_layers; ++i)
        coord_mlp_.emplace_back(ps_, "coord.l" + std::to_string(i), i == 0 ? in : cfg.coord_hidden,
                                cfg.coord_hidden, rng);
    gps_proj_ = nn::Linear(ps_, "gps.proj", 2 * cfg.coord_hidden, cfg.embed_dim, rng);
}

Var GpsClipModel::embed_images(const Tensor& x) const {
    ConvTower tower;
    tower.convs = convs_;
    tower.norms = norms_;
    tower.image_size = cfg_.image_size;
    tower.out_channels = 4 * cfg_.base_channels;
    return normalize_rows(img_proj_(tower(x)));
}

Var GpsClipModel::embed_gps(const std::vector<geo::NormalizedGeo>& tags) const {
    int n = static_cast<int>(tags.size());
    int d = geo::encode_dim(cfg_.frequencies);
    Tensor ue({n, d}), ve({n, d});
    for (int i = 0; i < n; ++i) {
        auto eu = geo::positional_encode(tags[static_cast<size_t>(i)].u, cfg_.frequencies);
        auto ev = geo::positional_encode(tags[static_cast<size_t>(i)].v, cfg_.frequencies);
        std::copy(eu.begin(), eu.end(), ue.data.begin() + static_cast<int64_t>(i) * d);
        std::copy(ev.begin(), ev.end(), ve.data.begin() + static_cast<int64_t>(i) * d);
    }
    // the same MLP weights encode both coordinates
    Var hu = ag::constant(std::move(ue)), hv = ag::constant(std::move(ve));
    for (const auto& l : coord_mlp_) {
        hu = ag::gelu(l(hu));
        hv = ag::gelu(l(hv));
    }
    Var cat = ag::transpose(ag::concat_rows({ag::transpose(hu), ag::transpose(hv)}));
    return normalize_rows(gps_proj_(cat));
}

Var contrastive_loss(const Var& img_emb, const Var& gps_emb, float tau) {
    int n = img_emb->value.dim(0);
    if (n < 2) throw std::invalid_argument("contrastive_loss: batch must have n >= 2");
    if (!img_emb->value.same_shape(gps_emb->value))
        throw std::invalid_argument("contrastive_loss: embedding shape mismatch");
    if (tau <= 0.0f) throw std::invalid_argument("contrastive_loss: tau must be positive");
    Var logits = ag::scale(ag::matmul(img_emb, ag::transpose(gps_emb)), 1.0f / tau);
    std::vector<int> labels(static_cast<size_t>(n));
    std::iota(labels.begin(), labels.end(), 0);
    Var li = ag::cross_entropy_rows(logits, labels);
    Var lg = ag::cross_entropy_rows(ag::transpose(logits), labels);
    return ag::scale(ag::add(li, lg), 0.5f);
}

GpsClipTrainResult train_gps_clip(const std::string& dataset_dir, const GpsClipConfig& cfg_in,
                                  const std::string& run_dir) {
    auto ds = worldgen::Dataset::open(dataset_dir);
    auto set = diffusion::TrainSet::load(ds);
    if (set.images.empty()) throw std::invalid_argument("train_gps_clip: empty dataset");

    GpsClipConfig cfg = cfg_in;
    cfg.image_size = ds.spec.image_size;
    if (cfg.batch_size > static_cast<int>(set.images.size()))
        cfg.batch_size = static_cast<int>(set.images.size());

    GpsClipModel model(cfg, cfg.seed);
    nn::AdamW opt(model.params().vars(), cfg.lr, 0.9f, 0.999f, 1e-8f, cfg.weight_decay);

    fs::create_directories(run_dir);
    json cfg_json = cfg.to_json();
    {
        std::ofstream f(fs::path(run_dir) / "config.json", std::ios::trunc);
        f << cfg_json.dump(2) << "\n";
    }
    std::ofstream loss_log(fs::path(run_dir) / "loss.csv", std::ios::trunc);
    loss_log << "step,loss\n";

    // epoch shuffles keep tags within a batch distinct (no duplicate positives)
    Rng rng(cfg.seed ^ 0xc11b);
    std::vector<size_t> order(set.images.size());
    std::iota(order.begin(), order.end(), size_t{0});
    size_t cursor = order.size();

    float last = 0.0f;
    for (int step = 0; step < cfg.steps; ++step) {
        if (cursor + static_cast<size_t>(cfg.batch_size) > order.size()) {
            shuffle_indices(order, rng);
            cursor = 0;
        }
        std::vector<size_t> idx(order.begin() + static_cast<int64_t>(cursor),
                                order.begin() + static_cast<int64_t>(cursor) + cfg.batch_size);
        cursor += static_cast<size_t>(cfg.batch_size);

        Tensor x = stack_images(set.images, idx);
        std::vector<geo::NormalizedGeo> tags;
        for (size_t i : idx) tags.push_back(set.ngeo[i]);

        Var loss = contrastive_loss(model.embed_images(x), model.embed_gps(tags), cfg.tau);
        opt.zero_grad();
        ag::backward(loss);
        last = loss->value[0];
        if (!std::isfinite(last)) throw std::runtime_error("train_gps_clip: non-finite loss");
        opt.step();
        loss_log << step + 1 << "," << last << "\n";
    }

    CheckpointMeta meta;
    meta.config = cfg_json;
    meta.step = cfg.steps;
    GpsClipTrainResult r;
    r.final_checkpoint = (fs::path(run_dir) / "final.ckpt").string();
    save_checkpoint(r.final_checkpoint, meta, model.params(), &opt);
    r.final_loss = last;
    return r;
}

GpsClipModel load_gps_clip(const std::string& checkpoint_path) {
    CheckpointMeta meta = peek_checkpoint(checkpoint_path);
    GpsClipModel model(GpsClipConfig::from_json(meta.config), 0);
    load_checkpoint(checkpoint_path, model.params());
    return model;
}

namespace {

std::pair<Tensor, Tensor> embed_all(const GpsClipModel& model, const std::vector<Tensor>& images,
                                    const std::vector<geo::NormalizedGeo>& tags) {
    if (images.size() != tags.size() || images.empty())
        throw std::invalid_argument("geoclip: images/tags size mismatch or empty");
    ag::NoGradGuard ng;
    int n = static_cast<int>(images.size());
    int c = model.config().embed_dim;
    Tensor ie({n, c}), ge({n, c});
    const int chunk = 64;
    for (int lo = 0; lo < n; lo += chunk) {
        int hi = std::min(n, lo + chunk);
        std::vector<size_t> idx;
        std::vector<geo::NormalizedGeo> tsub;
        for (int i = lo; i < hi; ++i) {
            idx.push_back(static_cast<size_t>(i));
            tsub.push_back(tags[static_cast<size_t>(i)]);
        }
        Tensor iv = model.embed_images(stack_images(images, idx))->value;
        Tensor gv = model.embed_gps(tsub)->value;
        std::copy(iv.data.begin(), iv.data.end(), ie.data.begin() + static_cast<int64_t>(lo) * c);
        std::copy(gv.data.begin(), gv.data.end(), ge.data.begin() + static_cast<int64_t>(lo) * c);
    }
    return {std::move(ie), std::move(ge)};
}

}  // namespace

double gps_score(const GpsClipModel& model, const std::vector<Tensor>& images,
                 const std::vector<geo::NormalizedGeo>& tags) {
    auto [ie, ge] = embed_all(model, images, tags);
    int n = ie.dim(0), c = ie.dim(1);
    double mean = 0.0;
    for (int i = 0; i < n; ++i) {
        double dotv = 0.0;
        for (int k = 0; k < c; ++k)
            dotv += static_cast<double>(ie[static_cast<int64_t>(i) * c + k]) *
                    ge[static_cast<int64_t>(i) * c + k];
        mean += dotv;
    }
    return 100.0 * mean / n;
}

double retrieval_top1(const GpsClipModel& model, const std::vector<Tensor>& images,
                      const std::vector<geo::NormalizedGeo>& tags) {
    auto [ie, ge] = embed_all(model, images, tags);
    int n = ie.dim(0), c = ie.dim(1);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        int best = -1;
        double best_sim = -1e30;
        for (int j = 0; j < n; ++j) {
            double dotv = 0.0;
            for (int k = 0; k < c; ++k)
                dotv += static_cast<double>(ie[static_cast<int64_t>(i) * c + k]) *
                        ge[static_cast<int64_t>(j) * c + k];
            if (dotv > best_sim) {
                best_sim = dotv;
                best = j;
            }
        }
        if (best == i) ++correct;
    }
    return static_cast<double>(correct) / n;
}

// ---- angle classifier ----

AngleClassifier::AngleClassifier(const AngleClassifierConfig& cfg, uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    ConvTower tower(ps_, "cls", cfg.image_size, cfg.base_channels, rng);
    convs_ = std::move(tower.convs);
    norms_ = std::move(tower.norms);
    head_ = nn::Linear(ps_, "cls.head", 4 * cfg.base_channels, geo::kAngleBins, rng);
}

Var AngleClassifier::logits(const Tensor& x) const {
    ConvTower tower;
    tower.convs = convs_;
    tower.norms = norms_;
    tower.image_size = cfg_.image_size;
    tower.out_channels = 4 * cfg_.base_channels;
    Var out = head_(tower(x));
    Tensor mask({1, geo::kAngleBins});
    bool any_masked = false;
    for (int k = 0; k < geo::kAngleBins; ++k) {
        mask[k] = bin_present_[static_cast<size_t>(k)] ? 0.0f : -1e30f;
        any_masked |= !bin_present_[static_cast<size_t>(k)];
    }
    return any_masked ? ag::add_rowvec(out, ag::constant(std::move(mask))) : out;
}

std::vector<int> AngleClassifier::classify(const Tensor& x) const {
    ag::NoGradGuard ng;
    Tensor lg = logits(x)->value;
    int n = lg.dim(0);
    std::vector<int> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int k = 1; k < geo::kAngleBins; ++k)
            if (lg[static_cast<int64_t>(i) * geo::kAngleBins + k] >
                lg[static_cast<int64_t>(i) * geo::kAngleBins + best])
                best = k;
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

AngleTrainResult train_angle_classifier(const std::string& dataset_dir,
                                        const AngleClassifierConfig& cfg_in,
                                        const std::string& run_dir) {
    auto ds = worldgen::Dataset::open(dataset_dir);
    auto set = diffusion::TrainSet::load(ds);
    for (int b : set.angle_bin)
        if (b < 0) throw std::invalid_argument("train_angle_classifier: dataset has no angle bins");

    AngleClassifierConfig cfg = cfg_in;
    cfg.image_size = ds.spec.image_size;

    Rng rng(cfg.seed ^ 0xa716e);
    std::vector<size_t> order(set.images.size());
    std::iota(order.begin(), order.end(), size_t{0});
    shuffle_indices(order, rng);
    size_t n_hold = std::max<size_t>(1, static_cast<size_t>(cfg.holdout_fraction *
                                                            static_cast<float>(order.size())));
    std::vector<size_t> hold(order.begin(), order.begin() + static_cast<int64_t>(n_hold));
    std::vector<size_t> tr(order.begin() + static_cast<int64_t>(n_hold), order.end());
    if (tr.empty()) throw std::invalid_argument("train_angle_classifier: dataset too small");

    AngleClassifier model(cfg, cfg.seed);
    auto& mask = model.bin_mask();
    std::fill(mask.begin(), mask.end(), 0);
    for (size_t i : tr) mask[static_cast<size_t>(set.angle_bin[i])] = 1;
    int missing = 0;
    for (uint8_t m : mask) missing += m ? 0 : 1;
    if (missing > 0)
        std::cerr << "train_angle_classifier: warning: " << missing
                  << " angle bins absent from the training split; masking them\n";

    nn::AdamW opt(model.params().vars(), cfg.lr);
    fs::create_directories(run_dir);
    json cfg_json = cfg.to_json();
    {
        std::ofstream f(fs::path(run_dir) / "config.json", std::ios::trunc);
        f << cfg_json.dump(2) << "\n";
    }

    int bs = std::min<int>(cfg.batch_size, static_cast<int>(tr.size()));
    size_t cursor = tr.size();
    for (int step = 0; step < cfg.steps; ++step) {
        if (cursor + static_cast<size_t>(bs) > tr.size()) {
            shuffle_indices(tr, rng);
            cursor = 0;
        }
        std::vector<size_t> idx(tr.begin() + static_cast<int64_t>(cursor),
                                tr.begin() + static_cast<int64_t>(cursor) + bs);
        cursor += static_cast<size_t>(bs);
        Tensor x = stack_images(set.images, idx);
        std::vector<int> labels;
        for (size_t i : idx) labels.push_back(set.angle_bin[i]);
        Var loss = ag::cross_entropy_rows(model.logits(x), labels);
        opt.zero_grad();
        ag::backward(loss);
        if (!std::isfinite(loss->value[0]))
            throw std::runtime_error("train_angle_classifier: non-finite loss");
        opt.step();
    }

    int correct = 0;
    {
        Tensor x = stack_images(set.images, hold);
        auto pred = model.classify(x);
        for (size_t i = 0; i < hold.size(); ++i)
            if (pred[i] == set.angle_bin[hold[i]]) ++correct;
    }

    CheckpointMeta meta;
    meta.config = cfg_json;
    meta.config["bin_present"] = std::vector<int>(mask.begin(), mask.end());
    meta.step = cfg.steps;
    AngleTrainResult r;
    r.final_checkpoint = (fs::path(run_dir) / "final.ckpt").string();
    save_checkpoint(r.final_checkpoint, meta, model.params(), &opt);
    r.holdout_accuracy = static_cast<double>(correct) / static_cast<double>(hold.size());
    r.missing_bins = missing;
    return r;
}

AngleClassifier load_angle_classifier(const std::string& checkpoint_path) {
    CheckpointMeta meta = peek_checkpoint(checkpoint_path);
    AngleClassifier model(AngleClassifierConfig::from_json(meta.config), 0);
    if (meta.config.contains("bin_present")) {
        auto v = meta.config.at("bin_present").get<std::vector<int>>();
        for (size_t i = 0; i < model.bin_mask().size() && i < v.size(); ++i)
            model.bin_mask()[i] = static_cast<uint8_t>(v[i]);
    }
    load_checkpoint(checkpoint_path, model.params());
    return model;
}

double angle_accuracy(const std::function<Tensor(int bin, int rep)>& generate,
                      const AngleClassifier& classifier, int reps) {
    int correct = 0, total = 0;
    for (int bin = 0; bin < geo::kAngleBins; ++bin) {
        std::vector<Tensor> imgs;
        for (int rep = 0; rep < reps; ++rep) imgs.push_back(generate(bin, rep));
        std::vector<size_t> idx(imgs.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        auto pred = classifier.classify(stack_images(imgs, idx));
        for (int p : pred) {
            if (p == bin) ++correct;
            ++total;
        }
    }
    return 100.0 * correct / total;
}

}  // namespace gpsgen::geoclip
