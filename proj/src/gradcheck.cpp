#include "avdg/gradcheck.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "avdg/errors.hpp"

namespace avdg {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back({&tape, tape.borrow(t, false)});
    return f(tape, vars).value().item();
}

}  // namespace

double grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double step) {
    if (!(step > 0.0)) throw ContractViolation("grad_check: step must be positive");

    Tape tape;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const Tensor& t : inputs) vars.push_back({&tape, tape.borrow(t, true)});
    const Var out = f(tape, vars);
    const double f0 = out.value().item();
    const Gradients grads = tape.backward(out.id);

    const double again = evaluate(f, inputs);
    if (std::bit_cast<std::uint64_t>(again) != std::bit_cast<std::uint64_t>(f0)) {
        throw DiagnosticError("grad_check: f is not deterministic (" + std::to_string(f0) + " vs " +
                              std::to_string(again) + ")");
    }

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const std::vector<double> analytic = grads[vars[k].id];
        auto data = inputs[k].data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double orig = data[i];
            data[i] = orig + step;
            const double fp = evaluate(f, inputs);
            data[i] = orig - step;
            const double fm = evaluate(f, inputs);
            data[i] = orig;
            const double central = (fp - fm) / (2.0 * step);
            const double denom = std::max({std::abs(analytic[i]), std::abs(central), 1e-8});
            worst = std::max(worst, std::abs(analytic[i] - central) / denom);
        }
    }
    return worst;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double step) {
    return grad_check([&f](Tape& tape, std::span<const Var> in) { return f(tape, in[0]); },
                      std::vector<Tensor>{x}, step);
}

}  // namespace avdg
