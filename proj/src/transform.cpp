#include "bcae/transform.hpp"

namespace bcae {

namespace detail {
void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw shape_error(std::string(what) + ": size mismatch, " + std::to_string(a) + " vs " +
                          std::to_string(b));
    }
}
}  // namespace detail

LossState update_loss_weight(const LossState& state) {
    LossState next = state;
    next.epoch = state.epoch + 1;
    next.weight_frozen = false;
    if (!state.has_history) {
        next.seg_weight = 1.0;  // first epoch trains unweighted
        return next;
    }
    if (state.rho_s <= 0.0) {
        next.seg_weight = state.seg_weight;
        next.weight_frozen = true;
        return next;
    }
    next.seg_weight = state.rho_r / state.rho_s;
    return next;
}

}  // namespace bcae
