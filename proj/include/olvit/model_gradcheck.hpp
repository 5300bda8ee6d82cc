#pragma once

#include <vector>

#include "olvit/dialog.hpp"
#include "olvit/gradcheck.hpp"
#include "olvit/model.hpp"

namespace olvit {

// Smallest configuration that still exercises every block.
inline ModelConfig tiny_gradcheck_config(Mode mode = Mode::kDiscriminative,
                                         CombinerVariant combiner = CombinerVariant::kA) {
  ModelConfig c;
  c.d = 12;
  c.heads = 2;
  c.L = 1;
  c.tracker.L_ost = 1;
  c.tracker.L_lst = 1;
  c.tracker.k = 2;
  c.tracker.H = 3;
  c.T = 2;
  c.N_o = 2;
  c.N = 4;
  c.d_w = 8;
  c.max_seq_len = 24;
  c.max_gen_len = 4;
  c.mode = mode;
  c.combiner = combiner;
  return c;
}

// Gradient check of one turn's loss with respect to every model parameter. The
// turn follows a fixed random prior state, so the tracker updates lie on the
// differentiated path (carried rows themselves are detached between turns).
inline GradCheckReport model_gradcheck(const ModelConfig& cfg, std::uint64_t seed = 1, double h = 1e-5,
                                       double tolerance = 1e-4) {
  OlvitModel<double> model(cfg, seed);
  Rng rng(hash_seed({seed, 0x67636bu}));
  const auto& vocab = Vocabulary::standard();

  TurnInput<double> in;
  std::vector<double> lat(cfg.T * cfg.N_o * cfg.d_obj);
  for (auto& v : lat) v = rng.normal(0.0, 1.0);
  in.latents = Tensor<double>({cfg.T * cfg.N_o, cfg.d_obj}, std::move(lat));
  in.question = vocab.encode(split_words("is it red"));
  in.answer_tokens = vocab.encode(split_words("yes"));
  in.answer_index = 1;

  auto random_rows = [&](std::size_t n) {
    std::vector<double> v(n * cfg.d);
    for (auto& x : v) x = rng.normal(0.0, 0.5);
    return Tensor<double>({n, cfg.d}, std::move(v));
  };
  auto state = model.initial_state();
  state.turn_index = 2;
  state.s_o = random_rows(1);
  state.s_l = random_rows(1);
  state.carried = random_rows(cfg.tracker.k);
  state.history = {vocab.encode(split_words("is there a cube yes")),
                   vocab.encode(split_words("what shape is it sphere"))};

  auto loss_fn = [&] {
    if (model.discriminative()) return model.forward_discriminative(in, state).loss;
    return model.forward_generative_teacher_forced(in, state, with_eos(in.answer_tokens)).loss;
  };
  std::vector<NamedTensor> inputs;
  for (auto& p : model.params().entries()) inputs.push_back({p.name, p.value});
  return check_gradients(loss_fn, inputs, h, tolerance);
}

}  // namespace olvit
