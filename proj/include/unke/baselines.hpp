#pragma once

#include <vector>

#include "unke/editor.hpp"

namespace unke {

enum class FtScope { layer, all };

struct FtConfig {
    float lr = 5e-4f;
    int steps = 25;
    FtScope scope = FtScope::layer;  // layer = block L, the block UnKE targets
};

// Fine-tuning baseline: Adam on the teacher-forced answer NLL of (q, a),
// over block L only (FT-L) or every parameter (FT-A). Returns the loss trace.
std::vector<double> ft_edit(TransformerModel& model, const EditRequest& req,
                            const FtConfig& cfg);

}  // namespace unke
