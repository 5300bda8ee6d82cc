#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "olvit/model.hpp"
#include "olvit/model_gradcheck.hpp"

using namespace olvit;
using T64 = Tensor<double>;
using Model = OlvitModel<double>;

namespace {

const Vocabulary& vocab() { return Vocabulary::standard(); }

std::vector<std::size_t> words(const std::string& s) { return vocab().encode(split_words(s)); }

T64 random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, scale);
  return T64(std::move(shape), std::move(v));
}

void randomize(Model& m, Rng& rng, double scale = 0.5) {
  for (auto& p : m.params().entries())
    for (auto& v : p.value.mutable_data()) v = rng.normal(0.0, scale);
}

void fill(Model& m, const std::string& name, double value) {
  for (auto& p : m.params().entries())
    if (p.name == name) std::fill(p.value.mutable_data().begin(), p.value.mutable_data().end(), value);
}

TurnInput<double> random_turn(const ModelConfig& cfg, Rng& rng, const std::string& question = "is it red",
                              const std::string& answer = "yes") {
  TurnInput<double> in;
  in.latents = random_tensor({cfg.T * cfg.N_o, cfg.d_obj}, rng);
  in.question = words(question);
  in.answer_tokens = words(answer);
  in.answer_index = 1;
  return in;
}

// Random question of 2..5 words drawn from the content vocabulary.
std::vector<std::size_t> random_question(Rng& rng) {
  std::vector<std::size_t> q(static_cast<std::size_t>(rng.uniform_int(2, 5)));
  for (auto& t : q) t = static_cast<std::size_t>(rng.uniform_int(3, static_cast<int>(vocab().size()) - 1));
  return q;
}

ModelConfig gen_config() {
  auto cfg = tiny_gradcheck_config(Mode::kGenerative);
  cfg.max_gen_len = 6;
  cfg.max_seq_len = 64;
  return cfg;
}

// Per-layer scalars written out: LN gain and shift, four d×d projections with biases.
std::size_t audit_layer(std::size_t d) { return 2 * d + 4 * (d * d + d); }

}  // namespace

TEST(ModelConfig, Defaults) {
  ModelConfig c;
  EXPECT_EQ(c.L, 4u);
  EXPECT_EQ(c.heads, 6u);
  EXPECT_EQ(c.d, 216u);
  EXPECT_EQ(c.N, 40u);
  EXPECT_EQ(c.max_gen_len, 40u);
  EXPECT_EQ(c.combiner, CombinerVariant::kA);
  EXPECT_EQ(c.mode, Mode::kDiscriminative);
  EXPECT_EQ(c.dropout, 0.0);
  EXPECT_NO_THROW(c.validate());
}

TEST(ModelConfig, InvalidRejected) {
  ModelConfig c;
  c.heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.tracker.k = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ForwardDiscriminative, DefaultShapes) {
  ModelConfig cfg;
  Model model(cfg, 1);
  Rng rng(1);
  auto in = random_turn(cfg, rng);
  in.question = std::vector<std::size_t>(12, words("cube")[0]);
  auto out = model.forward_discriminative(in, model.initial_state());
  EXPECT_EQ(out.logits.shape(), (Shape{40}));
  EXPECT_EQ(out.layout.rows.dim(0), 255u);
  EXPECT_EQ(out.alpha.numel(), 240u);
  EXPECT_EQ(out.selected.size(), 2u);
  for (double v : out.logits.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(ForwardDiscriminative, Deterministic) {
  auto cfg = tiny_gradcheck_config();
  Model a(cfg, 3), b(cfg, 3);
  Rng rng(2);
  auto in = random_turn(cfg, rng);
  EXPECT_EQ(a.forward_discriminative(in, a.initial_state()).logits.values(),
            b.forward_discriminative(in, b.initial_state()).logits.values());
}

TEST(ForwardDiscriminative, ModeMismatch) {
  Model gen(gen_config(), 1);
  Rng rng(3);
  auto in = random_turn(gen.config(), rng);
  EXPECT_THROW(gen.forward_discriminative(in, gen.initial_state()), ConfigError);
  Model disc(tiny_gradcheck_config(), 1);
  EXPECT_THROW(disc.generate(in, disc.initial_state()), ConfigError);
  EXPECT_THROW(disc.forward_generative_teacher_forced(in, disc.initial_state(), {1}), ConfigError);
}

TEST(PredictAnswer, Examples) {
  EXPECT_EQ(predict_answer(T64({3}, {0.1, 0.9, 0.3})), 1u);
  EXPECT_EQ(predict_answer(T64({4}, {0.5, 0.5, 0.5, 0.5})), 0u);
  EXPECT_THROW(predict_answer(T64()), DimensionError);
}

TEST(PredictAnswer, InvariantUnderSoftmax) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto logits = random_tensor({40}, rng, 3.0);
    EXPECT_EQ(predict_answer(logits), predict_answer(ops::softmax(logits, 0)));
  }
}

TEST(TeacherForced, EmptyAnswerRejected) {
  Model model(gen_config(), 1);
  Rng rng(5);
  auto in = random_turn(model.config(), rng);
  EXPECT_THROW(model.forward_generative_teacher_forced(in, model.initial_state(), {}), DimensionError);
}

TEST(TeacherForced, OverlongRejected) {
  auto cfg = gen_config();
  cfg.max_seq_len = 6;
  Model model(cfg, 1);
  Rng rng(6);
  auto in = random_turn(cfg, rng, "is there a large red cube");
  EXPECT_THROW(model.forward_generative_teacher_forced(in, model.initial_state(), {5, 6, 7}), DimensionError);
}

TEST(TeacherForced, PerturbingAnswerTokenOnlyAffectsLaterPositions) {
  Model model(gen_config(), 7);
  Rng rng(7);
  randomize(model, rng);
  auto in = random_turn(model.config(), rng);
  const std::vector<std::size_t> targets{10, 11, 12, 13, Vocabulary::kEos};
  const auto base = model.forward_generative_teacher_forced(in, model.initial_state(), targets).logits;
  // logit row r predicts targets[r] and sees targets[0..r)
  for (std::size_t t = 0; t < targets.size(); ++t) {
    auto perturbed = targets;
    perturbed[t] = perturbed[t] == 20 ? 21 : 20;
    const auto out = model.forward_generative_teacher_forced(in, model.initial_state(), perturbed).logits;
    for (std::size_t r = 0; r <= t; ++r) EXPECT_EQ(out.row_values(r), base.row_values(r)) << "t=" << t << " r=" << r;
    if (t + 1 < targets.size()) {
      EXPECT_NE(out.row_values(t + 1), base.row_values(t + 1)) << "t=" << t;
    }
  }
}

TEST(TeacherForced, LossIsMeanCrossEntropy) {
  Model model(gen_config(), 8);
  Rng rng(8);
  randomize(model, rng);
  auto in = random_turn(model.config(), rng);
  const std::vector<std::size_t> targets{10, 11, Vocabulary::kEos};
  auto out = model.forward_generative_teacher_forced(in, model.initial_state(), targets);
  double expected = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    auto row = out.logits.row_values(r);
    double mx = *std::max_element(row.begin(), row.end()), z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    expected += (mx + std::log(z) - row[targets[r]]) / 3.0;
  }
  EXPECT_NEAR(out.loss.item(), expected, 1e-12);
}

TEST(Generate, MatchesTeacherForcedReplay) {
  Model model(gen_config(), 9);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    randomize(model, rng, 0.8);
    auto in = random_turn(model.config(), rng);
    in.question = random_question(rng);
    auto g = model.generate(in, model.initial_state());
    auto tf = model.forward_generative_teacher_forced(in, model.initial_state(), g.tokens).logits;
    ASSERT_EQ(tf.dim(0), g.tokens.size());
    for (std::size_t r = 0; r < g.tokens.size(); ++r) {
      EXPECT_EQ(argmax(std::span<const double>(tf.row_values(r))), g.tokens[r]);
      EXPECT_EQ(tf.row_values(r), g.output.logits.row_values(r));
    }
  }
}

TEST(Generate, EqualsBeamWidthOneSearch) {
  Model model(gen_config(), 10);
  Rng rng(10);
  randomize(model, rng, 0.8);
  for (int trial = 0; trial < 5; ++trial) {
    auto in = random_turn(model.config(), rng);
    in.question = random_question(rng);
    // beam of one: keep the single highest-scoring extension, scoring each prefix by teacher forcing
    std::vector<std::size_t> beam;
    while (beam.size() < model.config().max_gen_len) {
      auto probe = beam;
      probe.push_back(0);
      auto logits = model.forward_generative_teacher_forced(in, model.initial_state(), probe).logits;
      auto last = ops::softmax(ops::slice_rows(logits, beam.size(), beam.size() + 1), 1).values();
      std::size_t best = 0;
      for (std::size_t v = 1; v < last.size(); ++v)
        if (last[v] > last[best]) best = v;
      beam.push_back(best);
      if (best == Vocabulary::kEos) break;
    }
    EXPECT_EQ(model.generate(in, model.initial_state()).tokens, beam);
  }
}

TEST(Generate, AlwaysEosHead) {
  Model model(gen_config(), 11);
  fill(model, "vocab.w", 0.0);
  fill(model, "vocab.b", 0.0);
  model.params().entries().back().value.mutable_data()[Vocabulary::kEos] = 5.0;
  Rng rng(11);
  auto g = model.generate(random_turn(model.config(), rng), model.initial_state());
  EXPECT_EQ(g.tokens, (std::vector<std::size_t>{Vocabulary::kEos}));
  EXPECT_TRUE(g.output.record.turn_tokens == words("is it red"));
}

TEST(Generate, NeverEosStopsAtForty) {
  auto cfg = gen_config();
  cfg.max_gen_len = 40;
  Model model(cfg, 12);
  fill(model, "vocab.w", 0.0);
  fill(model, "vocab.b", 0.0);
  auto& bias = model.params().entries().back().value;
  bias.mutable_data()[Vocabulary::kEos] = -5.0;
  bias.mutable_data()[7] = 1.0;
  Rng rng(12);
  auto g = model.generate(random_turn(cfg, rng), model.initial_state());
  EXPECT_EQ(g.tokens.size(), 40u);
  EXPECT_TRUE(std::none_of(g.tokens.begin(), g.tokens.end(), [](auto t) { return t == Vocabulary::kEos; }));
  EXPECT_EQ(g.output.logits.dim(0), 40u);
}

TEST(RunDialog, SingleTurnHasZeroStates) {
  auto cfg = tiny_gradcheck_config();
  Model model(cfg, 13);
  Rng rng(13);
  randomize(model, rng);
  auto outs = model.run_dialog({random_turn(cfg, rng)});
  ASSERT_EQ(outs.size(), 1u);
  EXPECT_EQ(outs[0].s_o.values(), std::vector<double>(cfg.d, 0.0));
  EXPECT_EQ(outs[0].s_l.values(), std::vector<double>(cfg.d, 0.0));
  EXPECT_EQ(outs[0].layout.rows.row_values(1), std::vector<double>(cfg.d, 0.0));
  EXPECT_EQ(outs[0].layout.rows.row_values(2), std::vector<double>(cfg.d, 0.0));
}

TEST(RunDialog, EmptyEpisodeRejected) {
  Model model(tiny_gradcheck_config(), 1);
  EXPECT_THROW(model.run_dialog({}), DataError);
}

TEST(RunDialog, SwappingFirstTwoQuestionsChangesSecondState) {
  auto cfg = tiny_gradcheck_config();
  Model model(cfg, 14);
  Rng rng(14);
  randomize(model, rng);
  auto t1 = random_turn(cfg, rng, "is there a cube", "yes");
  auto t2 = t1;
  t2.question = words("what color is it");
  t2.answer_tokens = words("red");
  auto a = model.run_dialog({t1, t2, t1});
  auto b = model.run_dialog({t2, t1, t1});
  EXPECT_NE(a[1].s_l.values(), b[1].s_l.values());
  EXPECT_NE(a[2].s_l.values(), b[2].s_l.values());
}

TEST(RunDialog, TurnNineWindowExcludesTurnOne) {
  auto cfg = tiny_gradcheck_config();
  cfg.tracker.H = 7;
  Model model(cfg, 15);
  Rng rng(15);
  randomize(model, rng);
  std::vector<TurnInput<double>> turns;
  for (int i = 0; i < 9; ++i) {
    auto in = random_turn(cfg, rng);
    in.question = random_question(rng);
    turns.push_back(in);
  }
  auto edited = turns;
  edited[0].question = words("how many red things are there");
  edited[0].answer_tokens = words("3");

  // the state entering turn 9 holds turns 2..8 either way
  auto state_before_nine = [&](const std::vector<TurnInput<double>>& ts) {
    NoGradScope<double> no_grad;
    auto s = model.initial_state();
    for (std::size_t i = 0; i < 8; ++i) s = model.advance(s, model.forward_discriminative(ts[i], s));
    return s;
  };
  auto a = state_before_nine(turns), b = state_before_nine(edited);
  ASSERT_EQ(a.history.size(), 7u);
  EXPECT_EQ(a.history, b.history);
  // with the recurrent s_l_prev pinned, the turn-9 update is bit-identical
  const auto& tp = model.tracker_params();
  auto lst = [&](const DialogState<double>& s) {
    return lst_update(a.s_l, s.history, model.embedder(), tp.w_w_lst, tp.lst, model.attention_config(), 7);
  };
  EXPECT_EQ(lst(a).values(), lst(b).values());
  EXPECT_EQ(model.run_dialog(turns)[8].s_l.values(), model.tracker_states(a).second.values());
}

TEST(RunDialog, SecondStateDependsOnlyOnCarriedRows) {
  auto cfg = tiny_gradcheck_config();
  Model model(cfg, 16);
  Rng rng(16);
  randomize(model, rng);
  NoGradScope<double> no_grad;
  auto in = random_turn(cfg, rng);
  auto out = model.forward_discriminative(in, model.initial_state());
  auto next = model.advance(model.initial_state(), out);
  ASSERT_EQ(next.carried.dim(0), cfg.tracker.k);
  // zero every unselected object row of the recorded turn
  auto rec = out.record;
  auto rows = rec.object_rows.values();
  for (std::size_t r = 0; r < rec.object_rows.dim(0); ++r)
    if (std::find(rec.selected.begin(), rec.selected.end(), r) == rec.selected.end())
      std::fill_n(rows.begin() + static_cast<std::ptrdiff_t>(r * cfg.d), cfg.d, 0.0);
  rec.object_rows = T64(rec.object_rows.shape(), rows);
  auto zeroed = advance_state(model.initial_state(), rec, cfg.tracker.H);
  EXPECT_EQ(model.tracker_states(next).first.values(), model.tracker_states(zeroed).first.values());
}

TEST(ModelParams, DefaultCountMatchesClosedForm) {
  ModelConfig cfg;
  Model model(cfg, 1);
  const std::size_t d = 216, layer = audit_layer(d);
  const std::size_t expected = d * 16            // W_obj
                               + 240 * d         // object positions
                               + d * 768         // W_w
                               + 64 * d          // text positions
                               + d               // [CLS]
                               + 4 * layer       // OST + LST, two layers each
                               + d * 768         // W_w_lst
                               + 4 * layer       // encoder
                               + 40 * d + 40;    // answer head
  EXPECT_EQ(expected, 1913152u);
  EXPECT_EQ(model.params().scalar_count(), expected);
}

TEST(ModelParams, VariantAndModeCounts) {
  auto base = tiny_gradcheck_config();
  const std::size_t d = base.d;
  const auto count = [](const ModelConfig& c) { return Model(c, 1).params().scalar_count(); };
  auto b = base;
  b.combiner = CombinerVariant::kB;
  EXPECT_EQ(count(b) - count(base), d * 2 * d);
  auto c = base;
  c.combiner = CombinerVariant::kC;
  EXPECT_EQ(count(c) - count(base), 2 * audit_layer(d));
  auto gen = base;
  gen.mode = Mode::kGenerative;
  const std::size_t vocab_n = base.vocab_size;
  // no [CLS] or answer head; L decoder layers of self plus cross attention and a vocabulary head
  EXPECT_EQ(count(gen) + d + base.N * d + base.N, count(base) + base.L * 2 * audit_layer(d) + vocab_n * d + vocab_n);
}

TEST(ModelParams, NoTrackerRemovesStateParamsAndRows) {
  auto cfg = tiny_gradcheck_config();
  cfg.tracker.use_ost = false;
  cfg.tracker.use_lst = false;
  Model model(cfg, 1);
  for (const auto& p : model.params().entries()) {
    EXPECT_EQ(p.name.rfind("ost.", 0), std::string::npos) << p.name;
    EXPECT_EQ(p.name.rfind("lst.", 0), std::string::npos) << p.name;
  }
  const auto full = Model(tiny_gradcheck_config(), 1).params().scalar_count();
  EXPECT_EQ(full - model.params().scalar_count(), 2 * audit_layer(cfg.d) + cfg.d * cfg.d_w);
  Rng rng(17);
  auto out = model.forward_discriminative(random_turn(cfg, rng), model.initial_state());
  EXPECT_EQ(out.layout.rows.dim(0), 1 + cfg.T * cfg.N_o + 3);
  EXPECT_EQ(out.layout.obj_begin, 1u);
}

TEST(ModelParams, SingleTrackerAblationsKeepOneStateRow) {
  auto cfg = tiny_gradcheck_config();
  cfg.tracker.use_lst = false;
  Model model(cfg, 1);
  Rng rng(18);
  auto out = model.forward_discriminative(random_turn(cfg, rng), model.initial_state());
  EXPECT_EQ(out.layout.obj_begin, 2u);
  EXPECT_FALSE(model.params().contains("lst.w_w"));
  EXPECT_TRUE(model.params().contains("ost.0.attn.wq"));
}

class ModelGradcheck : public ::testing::TestWithParam<std::tuple<Mode, CombinerVariant>> {};

TEST_P(ModelGradcheck, AllParametersWithinTolerance) {
  auto [mode, combiner] = GetParam();
  auto report = model_gradcheck(tiny_gradcheck_config(mode, combiner));
  for (const auto& p : report.params) EXPECT_TRUE(p.passed) << p.name << " rel err " << p.max_rel_error;
  EXPECT_LE(report.max_rel_error, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Variants, ModelGradcheck,
                         ::testing::Combine(::testing::Values(Mode::kDiscriminative, Mode::kGenerative),
                                            ::testing::Values(CombinerVariant::kA, CombinerVariant::kB,
                                                              CombinerVariant::kC)));

TEST(EpisodeLoss, BpttFlagReachesEarlierTurns) {
  auto cfg = tiny_gradcheck_config();
  Rng rng(19);
  std::vector<TurnInput<double>> turns{random_turn(cfg, rng), random_turn(cfg, rng), random_turn(cfg, rng)};
  for (bool bptt : {false, true}) {
    cfg.bptt = bptt;
    Model model(cfg, 20);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    std::vector<ModelOutput<double>> outs;
    auto loss = model.episode_loss(turns, {}, &outs);
    EXPECT_TRUE(std::isfinite(loss.item()));
    EXPECT_EQ(outs[2].s_o.requires_grad(), true);
    EXPECT_EQ(model.advance(model.initial_state(), outs[1]).s_o.requires_grad(), bptt);
  }
}

TEST(SingleStreamDecoder, OneSelfAttentionLayerPerDepth) {
  auto cross = gen_config(), single = gen_config();
  single.single_stream_decoder = true;
  Model a(cross, 1), b(single, 1);
  EXPECT_EQ(a.params().scalar_count() - b.params().scalar_count(), cross.L * audit_layer(cross.d));
  EXPECT_FALSE(b.params().contains("dec.0.cross.attn.wq"));
}

TEST(SingleStreamDecoder, GradientsMatchFiniteDifferences) {
  auto cfg = tiny_gradcheck_config(Mode::kGenerative);
  cfg.single_stream_decoder = true;
  auto report = model_gradcheck(cfg);
  for (const auto& p : report.params) EXPECT_TRUE(p.passed) << p.name << " rel err " << p.max_rel_error;
  EXPECT_LE(report.max_rel_error, 1e-4);
}

TEST(SingleStreamDecoder, CausalAndReplayConsistent) {
  auto cfg = gen_config();
  cfg.single_stream_decoder = true;
  Model model(cfg, 21);
  Rng rng(21);
  randomize(model, rng, 0.8);
  for (int trial = 0; trial < 10; ++trial) {
    auto in = random_turn(cfg, rng);
    in.question = random_question(rng);
    auto g = model.generate(in, model.initial_state());
    auto tf = model.forward_generative_teacher_forced(in, model.initial_state(), g.tokens).logits;
    for (std::size_t r = 0; r < g.tokens.size(); ++r) {
      EXPECT_EQ(argmax(std::span<const double>(tf.row_values(r))), g.tokens[r]);
      EXPECT_EQ(tf.row_values(r), g.output.logits.row_values(r));
    }
  }
  auto in = random_turn(cfg, rng);
  const std::vector<std::size_t> targets{10, 11, 12, Vocabulary::kEos};
  const auto base = model.forward_generative_teacher_forced(in, model.initial_state(), targets).logits;
  auto perturbed = targets;
  perturbed[1] = 20;
  const auto out = model.forward_generative_teacher_forced(in, model.initial_state(), perturbed).logits;
  EXPECT_EQ(out.row_values(0), base.row_values(0));
  EXPECT_EQ(out.row_values(1), base.row_values(1));
  EXPECT_NE(out.row_values(2), base.row_values(2));
}
