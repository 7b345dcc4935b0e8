#include "unke/baselines.hpp"

#include "unke/adam.hpp"

namespace unke {

std::vector<double> ft_edit(TransformerModel& model, const EditRequest& req,
                            const FtConfig& cfg) {
    if (cfg.lr <= 0.0f || cfg.steps < 0) throw ContractError("ft_edit: invalid config");
    if (req.question.empty() || req.answer.empty())
        throw ContractError("ft_edit: empty question or answer");
    if (static_cast<int>(req.question.size() + req.answer.size()) >
        model.config().max_seq_len)
        throw ShapeError("ft_edit: question plus answer exceeds max_seq_len");

    std::vector<int> tokens = req.question;
    tokens.insert(tokens.end(), req.answer.begin(), req.answer.end());
    const int n = static_cast<int>(req.question.size());
    std::vector<int> targets(tokens.size(), -1);
    for (size_t i = 0; i < req.answer.size(); ++i)
        targets[static_cast<size_t>(n) - 1 + i] = req.answer[i];

    model.set_requires_grad(false);
    std::vector<Tensor> scoped =
        cfg.scope == FtScope::layer
            ? model.block(model.config().split_layer).parameters()
            : model.parameters();
    for (Tensor& p : scoped) p.set_requires_grad(true);
    Adam opt(scoped, {});

    std::vector<double> trace;
    for (int step = 0; step < cfg.steps; ++step) {
        Tape tape;
        Tensor loss = ops::cross_entropy_mean(model.forward(tokens).logits, targets);
        trace.push_back(static_cast<double>(loss.item()));
        tape.backward(loss);
        opt.step(cfg.lr);
        for (Tensor& p : scoped) p.zero_grad();
    }
    for (Tensor& p : scoped) {
        p.set_requires_grad(false);
        p.drop_grad();
    }
    return trace;
}

}  // namespace unke
