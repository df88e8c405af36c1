#include <doctest.h>

#include "oosdsd/checkpoint.hpp"
#include "oosdsd/config.hpp"
#include "oosdsd/errors.hpp"
#include "oosdsd/synthgen.hpp"
#include "oosdsd/trainer.hpp"
#include "test_util.hpp"

#include <fstream>
#include <sstream>

using namespace oosdsd;

namespace {

RunConfig tiny_config() {
  RunConfig c = profile_config("desk");
  c.net.width_multiple = 0.0625;
  c.net.reg_max = 8;
  c.augment.target_size = 64;
  c.augment_enabled = false;
  c.train.batch_size = 4;
  c.train.epochs = 3;
  c.train.warmup_epochs = 0;
  return c;
}

std::vector<DatasetRecord> tiny_records(int n, std::uint64_t seed = 0) {
  SynthOptions o;
  o.image_size = 96;
  return generate_dataset(n, seed, o);
}

std::vector<DatasetRecord> prepared(int n, const RunConfig& cfg) {
  return prepare_records(depth_for_training(tiny_records(n), cfg), cfg.input_size());
}

} // namespace

TEST_CASE("profiles") {
  const auto desk = profile_config("desk");
  CHECK(desk.input_size() == 320);
  CHECK(desk.train.batch_size == 2);
  CHECK(desk.train.epochs == 100);
  const auto paper = profile_config("paper");
  CHECK(paper.input_size() == 1280);
  CHECK(paper.train.batch_size == 8);
  CHECK(paper.train.epochs == 1000);
  CHECK(paper.net.width_multiple == 0.5);
  CHECK_NOTHROW(paper.validate());
  CHECK_THROWS_AS(profile_config("laptop"), ConfigError);
}

TEST_CASE("config keys round-trip through text and JSON") {
  RunConfig c = profile_config("desk");
  apply_overrides(c, {"loss.seg=bce", "loss.depth = mse", "train.lr0=0.02", "augment.flip_prob=0.25",
                      "net.segment=false", "train.seed=7"});
  CHECK(c.loss.seg == SegLossKind::bce);
  CHECK(c.loss.depth == DepthLossKind::mse);
  CHECK(c.train.lr0 == 0.02);
  CHECK_FALSE(c.net.segment);
  CHECK(config_from_json(to_json(c)) == c);

  std::stringstream text;
  for (const auto& [k, v] : config_entries(c)) text << k << " = " << v << "  # comment\n";
  CHECK(parse_config(text, profile_config("paper")) == c);
  CHECK(config_keys().size() == config_entries(c).size());

  CHECK_THROWS_AS(apply_overrides(c, {"loss.segx=dice"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(c, {"train.epochs=ten"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(c, {"loss.seg=focal"}), ConfigError);
  CHECK_THROWS_AS(apply_overrides(c, {"noequals"}), ConfigError);
}

TEST_CASE("config file with a profile line and comments") {
  testutil::TempDir dir("trainer");
  const auto path = dir.path() / "run.cfg";
  {
    std::ofstream out(path);
    out << "# desk run\nprofile = desk\n\nloss.seg = l1\naugment.target_size = 352 # odd size\n";
  }
  const auto c = load_config_file(path);
  CHECK(c.profile == "desk");
  CHECK(c.train.batch_size == 2);
  CHECK(c.loss.seg == SegLossKind::l1);
  CHECK(c.input_size() == 352);
  {
    std::ofstream out(path);
    out << "loss.seg = l1\nprofile = desk\n";
  }
  CHECK_THROWS_AS(load_config_file(path), ConfigError);
  write_config_file(path, c);
  CHECK(load_config_file(path) == c);
}

TEST_CASE("config validation rejects inconsistent settings") {
  RunConfig c = profile_config("desk");
  c.data.normalize_depth = false;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.loss.require_normalized_depth = false;
  CHECK_NOTHROW(c.validate());
  c.train.patience = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = profile_config("desk");
  c.augment.target_size = 300;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("seeded initialization is reproducible") {
  const auto cfg = tiny_config();
  Network<float> a(cfg.net, 0), b(cfg.net, 1);
  init_parameters(b, 0);
  auto pa = a.named_parameters(), pb = b.named_parameters();
  for (const auto& [name, p] : pa) CHECK(p->value == pb[name]->value);
}

TEST_CASE("checkpoint save, load and restore") {
  testutil::TempDir dir("trainer");
  const auto cfg = tiny_config();
  Network<float> a(cfg.net, 3);
  const auto ck = capture(a, {{"epoch", 4}});
  save_checkpoint(dir.path() / "a.ckpt", ck);
  const auto back = load_checkpoint(dir.path() / "a.ckpt");
  CHECK(back.net == cfg.net);
  CHECK(back.meta["epoch"] == 4);
  CHECK(back.tensors.size() == ck.tensors.size());

  Network<float> b(cfg.net, 9);
  restore(b, back);
  auto pa = a.named_parameters(), pb = b.named_parameters();
  for (const auto& [name, p] : pa) CHECK(p->value == pb[name]->value);

  auto partial = back;
  partial.tensors.erase(partial.tensors.begin());
  CHECK_THROWS_AS(restore(b, partial), KeyMismatchError);

  {
    std::ofstream out(dir.path() / "junk.ckpt");
    out << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(dir.path() / "junk.ckpt"), KeyMismatchError);
}

TEST_CASE("pretrained import covers blocks 0-22 only") {
  const auto cfg = tiny_config();
  Network<float> donor(cfg.net, 100);
  const auto ck = capture(donor);
  Network<float> net(cfg.net, 0);
  init_parameters(net, 0, &ck);
  Network<float> fresh(cfg.net, 0);
  auto pn = net.named_parameters(), pd = donor.named_parameters(), pf = fresh.named_parameters();
  for (const auto& [name, p] : pn) {
    if (block_of(name) <= 22) CHECK(p->value == pd[name]->value);
    else CHECK(p->value == pf[name]->value);
  }

  auto missing = ck;
  for (auto it = missing.tensors.begin(); it != missing.tensors.end();)
    it = block_of(it->first) == 5 ? missing.tensors.erase(it) : std::next(it);
  CHECK_THROWS_AS(init_parameters(net, 0, &missing), KeyMismatchError);

  // A detector-only donor still provides every block up to 22.
  NetworkConfig det_only = cfg.net;
  det_only.segment = det_only.depth = false;
  Network<float> det(det_only, 5);
  const auto ck2 = capture(det);
  CHECK_NOTHROW(init_parameters(net, 0, &ck2));
}

TEST_CASE("SGD with Nesterov momentum matches the closed form") {
  nn::Parameter<float> w("w", {2}, true, true), b("b", {1}, true, false);
  w.value << 1.0f, -2.0f;
  b.value << 0.5f;
  SGD opt({&w, &b});
  const float lr = 0.1f, m = 0.9f, wd = 0.01f;
  w.grad << 0.3f, 0.1f;
  b.grad << 0.2f;
  opt.step(lr, m, wd);
  // First step: buf = g + wd*w, update = g' + m*buf.
  const float g0 = 0.3f + wd * 1.0f;
  CHECK(w.value[0] == doctest::Approx(1.0f - lr * (g0 + m * g0)));
  CHECK(b.value[0] == doctest::Approx(0.5f - lr * (0.2f + m * 0.2f)));
  const float w1 = w.value[0];
  w.grad << 0.0f, 0.0f;
  b.grad << 0.0f;
  opt.step(lr, m, wd);
  const float g1 = wd * w1, buf1 = m * g0 + g1;
  CHECK(w.value[0] == doctest::Approx(w1 - lr * (g1 + m * buf1)));
}

TEST_CASE("gradient clipping bounds the global norm") {
  nn::Parameter<float> w("w", {2}, true, true);
  w.grad << 30.0f, 40.0f;
  SGD opt({&w});
  CHECK(opt.clip_gradients(10.0) == doctest::Approx(50.0));
  CHECK(w.grad.norm() == doctest::Approx(10.0).epsilon(1e-5));
}

TEST_CASE("cosine schedule endpoints") {
  TrainConfig t;
  t.epochs = 11;
  CHECK(cosine_lr(t, 0) == doctest::Approx(0.01));
  CHECK(cosine_lr(t, 10) == doctest::Approx(1e-4));
  CHECK(cosine_lr(t, 5) == doctest::Approx(0.5 * (0.01 + 1e-4)));
}

// Detection targets come from the pre-step predictions and are held fixed, as in the gradient.
TEST_CASE("a small step along the gradient lowers the loss") {
  auto cfg = tiny_config();
  const auto recs = prepared(4, cfg);
  std::vector<const DatasetRecord*> ptr;
  for (const auto& r : recs) ptr.push_back(&r);
  const auto batch = make_batch(ptr);
  Network<float> net(cfg.net, 0);
  SGD opt(net.parameters());
  auto out = net.forward(batch.images, true);
  const auto before = compute_loss(out, batch.targets, cfg.net, cfg.loss, true);
  net.zero_grad();
  net.backward(before.grads);
  opt.step(1e-5, 0.0, 0.0);
  out = net.forward(batch.images, true);
  const auto after = compute_loss(out, batch.targets, cfg.net, cfg.loss, false, &before.assignment);
  CHECK(after.breakdown.total < before.breakdown.total);
  CHECK(after.breakdown.detection() < before.breakdown.detection());
}

TEST_CASE("a huge learning rate is reported as divergence") {
  auto cfg = tiny_config();
  cfg.train.lr0 = 1e6;
  cfg.train.lr_final = 1e6;
  cfg.train.grad_clip = 0;
  cfg.train.epochs = 20;
  const auto recs = prepared(4, cfg);
  CHECK_THROWS_AS(train(recs, recs, cfg), DivergenceError);
}

TEST_CASE("early stopping on a plateau stops patience epochs after the best") {
  auto cfg = tiny_config();
  cfg.train.lr0 = cfg.train.lr_final = 1e-30;
  cfg.train.epochs = 50;
  cfg.train.patience = 5;
  const auto recs = prepared(4, cfg);
  const auto r = train(recs, recs, cfg);
  CHECK(r.stopped_early);
  CHECK(r.best_epoch == 0);
  CHECK(r.history.size() == 6);
}

TEST_CASE("best-so-far fitness is monotone and the returned checkpoint is the best") {
  auto cfg = tiny_config();
  cfg.train.epochs = 12;
  cfg.train.lr0 = 0.02;
  const auto recs = prepared(8, cfg);
  const auto r = train(recs, recs, cfg);
  double best = -1e300, prev = -1e300;
  for (const auto& e : r.history) {
    REQUIRE(e.fitness.has_value());
    best = std::max(best, *e.fitness);
    CHECK(*e.best_fitness >= prev);
    CHECK(*e.best_fitness == best);
    prev = *e.best_fitness;
  }
  CHECK(r.best_fitness == best);
  Network<float> net(cfg.net, 0);
  restore(net, r.best);
  std::vector<const DatasetRecord*> ptr;
  for (const auto& x : recs) ptr.push_back(&x);
  CHECK(fitness(evaluate_model(net, ptr, cfg), cfg.net) == r.best_fitness);
}

TEST_CASE("training is deterministic for a seed, with and without augmentation") {
  for (bool aug : {false, true}) {
    auto cfg = tiny_config();
    cfg.augment_enabled = aug;
    cfg.train.epochs = 2;
    const auto recs = prepared(6, cfg);
    const auto a = train(recs, recs, cfg), b = train(recs, recs, cfg);
    REQUIRE(a.best.tensors.size() == b.best.tensors.size());
    for (const auto& [name, e] : a.best.tensors) CHECK(e.values == b.best.tensors.at(name).values);
    CHECK(a.history.back().train.total == b.history.back().train.total);
  }
}

TEST_CASE("detection-free models select on validation loss") {
  auto cfg = tiny_config();
  cfg.net.detect = false;
  cfg.train.epochs = 2;
  const auto recs = prepared(4, cfg);
  const auto r = train(recs, recs, cfg);
  REQUIRE(r.history.back().val.has_value());
  CHECK(*r.history.back().fitness == -r.history.back().val->loss.total);
}

TEST_CASE("cross-validation aggregates every fold") {
  auto cfg = tiny_config();
  cfg.train.epochs = 1;
  const auto recs = tiny_records(10);
  testutil::TempDir dir("trainer");
  const auto rep = run_cross_validation(recs, cfg, {}, dir.path());
  REQUIRE(rep.folds.size() == 5);
  double sum = 0;
  for (const auto& f : rep.folds) sum += f.test.map;
  CHECK(rep.mean.map == doctest::Approx(sum / 5).epsilon(1e-12));
  CHECK(std::filesystem::exists(dir.path() / "cv_report.json"));
  CHECK(std::filesystem::exists(dir.path() / "fold_3" / "best.ckpt"));
  const auto again = run_cross_validation(recs, cfg);
  for (int f = 0; f < 5; ++f) CHECK(to_json(again.folds[f].test) == to_json(rep.folds[f].test));
  CHECK_THROWS_AS(run_cross_validation(tiny_records(4), cfg), TooFewRecordsError);
}

TEST_CASE("predictions map back to the source frame") {
  auto cfg = tiny_config();
  const auto rec = tiny_records(1)[0];
  DatasetRecord wide = letterbox(rec, 96).record;
  Network<float> net(cfg.net, 0);
  cfg.eval.conf_threshold = 0.0;
  const auto p = predict_record(net, rec, cfg);
  CHECK(p.seg_prob.rows() == rec.rows());
  CHECK(p.depth.cols() == rec.cols());
  for (const auto& b : p.boxes) CHECK_NOTHROW(validate(b));
}

TEST_CASE("raw depth is refused unless the config allows it") {
  auto cfg = tiny_config();
  auto recs = prepare_records(tiny_records(4), cfg.input_size());  // raw depth
  CHECK_THROWS_AS(train(recs, recs, cfg), NotNormalizedError);
  cfg.data.normalize_depth = false;
  cfg.loss.require_normalized_depth = false;
  cfg.train.epochs = 1;
  CHECK_NOTHROW(train(recs, recs, cfg));
  CHECK_THROWS_AS(depth_for_training(depth_for_training(tiny_records(2), tiny_config()), cfg), ConfigError);
}
