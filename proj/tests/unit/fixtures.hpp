#pragma once

#include "zsml/eval.hpp"
#include "zsml/synth.hpp"

#include <memory>

namespace zsml::testing {

// A prepared fold of a small synthetic study, owning its tables.
struct PreparedFold {
    SyntheticStudy study;
    DatasetTable processed;
    Split split;
    TaskSet tasks;
    FoldData fold;
};

inline std::unique_ptr<PreparedFold> prepare_fold(const GeneratorConfig& gen, int held_out = 2) {
    auto p = std::make_unique<PreparedFold>();
    p->study = generate(gen);
    const DatasetTable visible = withhold_targets(p->study.table, held_out);
    const auto train = rows_not_in_group(visible, held_out);
    const PreprocessPlan plan = fit_preprocess(visible, p->study.manifest, train, PreprocessConfig{});
    p->processed = apply_preprocess(visible, plan);
    p->split = group_holdout_split(p->processed, SplitSpec{held_out, {}});
    p->tasks = select_training_tasks(p->split.train, target_tasks(p->split.train), SelectionConfig{});
    p->fold = FoldData{&p->split.train, &p->split.test, p->processed.input_columns()};
    return p;
}

inline GeneratorConfig small_generator(std::uint64_t seed = 0) {
    GeneratorConfig g;
    g.n_per_group = {20};
    g.d_aux = 3;
    g.seed = seed;
    return g;
}

} // namespace zsml::testing
