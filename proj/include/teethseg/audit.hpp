#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace teethseg {

struct AuditRow {
    std::string name;
    double worst = 0.0;
    double threshold = 1e-4;
    bool pass = true;
};

// Finite-difference audit of every primitive backward rule, every composite
// block and the end-to-end tiny model, repeated over `num_seeds` seeds. Each
// row reports the worst relative error seen for that target.
std::vector<AuditRow> run_grad_audit(std::uint64_t base_seed, int num_seeds);

bool audit_passed(const std::vector<AuditRow>& rows);

}  // namespace teethseg
