/**
 * @file checkpoint.hpp
 * @brief Flat key->array model archive (JSON container, lossless doubles).
 */

#ifndef OTSA_CHECKPOINT_HPP
#define OTSA_CHECKPOINT_HPP

#include <string>

#include "otsa/nn.hpp"
#include "otsa/ot_classifier.hpp"

namespace otsa {

void save_checkpoint(const TransformerModel& model, const std::string& path);
TransformerModel load_transformer_checkpoint(const std::string& path);

/// Same container plus a header carrying centroids, offsets, and the
/// standardization parameters.
void save_checkpoint(const OTClassifierModel& model, const std::string& path);
OTClassifierModel load_ot_classifier_checkpoint(const std::string& path);

}  // namespace otsa

#endif  // OTSA_CHECKPOINT_HPP
