#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "affseg/flow.hpp"
#include "affseg/frame.hpp"
#include "affseg/model.hpp"

namespace affseg {

// ---------------------------------------------------------------------------
// Synthetic interaction sequences
// ---------------------------------------------------------------------------

struct SynthOptions {
  int size = 48;    // square canvas edge
  int frames = 12;  // total frames; the hand leaves before the last one
  int fps = 30;     // recorded in metadata, drives subsampling
};

struct SynthSpec {
  std::string object_kind;
  int affordance = 1;  // taxonomy index in [1, 9]
};

/// Procedural interaction clip: a static two-part object with a class-
/// coded affordance part, and a hand blob approaching the part along an
/// affordance-specific trajectory. The last frame shows the object at
/// rest and carries the pixel mask of exactly the affordance part.
/// Deterministic per (spec, seed).
InteractionSequence generate_synthetic_sequence(const SynthSpec& spec, uint64_t seed,
                                                const SynthOptions& options = {});

/// Uniform affordance, object drawn among the kinds compatible with it.
SynthSpec random_spec(std::mt19937_64& rng);

const std::vector<std::string>& object_kinds();
const std::vector<std::string>& compatible_objects(int affordance);

// ---------------------------------------------------------------------------
// On-disk dataset layout
//
//   <root>/<split>/<sequence_id>/
//     rgb/<idx>.png     8-bit 3-channel, idx zero-padded to 4 digits
//     depth/<idx>.png   16-bit 1-channel, millimetres
//     flow/<idx>.png    8-bit 3-channel colorized flow (optional cache)
//     mask.png          8-bit palette of taxonomy indices (last frame)
//     meta.json         {"action": <name>, "object": <name>, "fps": <int>}
// ---------------------------------------------------------------------------

void save_sequence(const InteractionSequence& seq, const std::filesystem::path& dir,
                   double max_depth_units = 4.5);

/// Loads one sequence directory; throws DataError with a distinct message
/// for a missing mask, an unknown label index, or non-monotonic frame
/// indices. RGB frames are resized to the depth resolution when they
/// differ.
InteractionSequence load_sequence(const std::filesystem::path& dir,
                                  double max_depth_units = 4.5);

/// Sequence directories of one split, sorted by name.
std::vector<std::filesystem::path> list_split(const std::filesystem::path& root,
                                              const std::string& split);

/// Cached colorized flow images keyed by the index of the later frame.
using FlowCache = std::map<int, ImageU8>;
FlowCache load_flow_cache(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Frame indices kept when subsampling source_fps to target_fps: every
/// floor(source/target)-th frame, and always the annotated last frame.
std::vector<int> subsample_indices(int frame_count, int source_fps, int target_fps);

struct PreprocessOptions {
  bool use_depth = true;
  int flow_dim = 3;  // 2 holds the depth-motion channel at mid-gray
  const FlowCache* flow_cache = nullptr;  // optional; computed on the fly otherwise
  FlowOptions flow_options{};
};

/// Subsamples, resizes (bilinear for rgb/depth/flow, nearest for the
/// mask), stacks RGB(+depth) per frame, and pairs every kept frame with
/// the colorized flow from its preceding kept frame (mid-gray for the
/// first). Target extents must be divisible by 8.
SequenceBatch preprocess(const InteractionSequence& seq, int target_h, int target_w,
                         int source_fps, int target_fps = 10,
                         const PreprocessOptions& options = {});

}  // namespace affseg
