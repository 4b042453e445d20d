#ifndef NCM_CHECKPOINT_H_
#define NCM_CHECKPOINT_H_

// Checkpoint file layout (version 1, all integers little-endian):
//
//   offset 0   8 bytes   magic "NCMCKPT1"
//          8   u32       format version
//         12   u64       header length N
//         20   N bytes   header: UTF-8 JSON object, keys sorted, no spaces
//     20 + N   payload   tensors as IEEE-754 binary32, row-major, in
//                        header directory order
//        end   u32       CRC-32 (zlib polynomial) of every preceding byte
//
// Header keys: "config" (model config), "schedule" (optional training
// schedule summary), "vocab" (token list, id order), "tensors" (array of
// {"name", "rows", "cols", "offset"} with offset in bytes from the start of
// the payload), "optimizer" (true when AdaGrad accumulators follow the model
// tensors under the names "adagrad/<tensor>").

#include <optional>
#include <string>
#include <string_view>

#include "ncm/error.h"
#include "ncm/model.h"
#include "ncm/text.h"
#include "ncm/train.h"

namespace ncm {

inline constexpr std::string_view kCheckpointMagic = "NCMCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
 public:
  enum class Kind {
    kIo,
    kUnrecognizedFormat,  // bad magic
    kVersionMismatch,
    kCorrupt,       // truncated, CRC mismatch, unparsable header
    kInconsistent,  // header contradicts itself or the config
  };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Checkpoint {
  ModelConfig config;
  Params<float> params;
  Vocabulary vocab;
  std::optional<AdagradState<float>> optimizer;
  std::optional<TrainSchedule> schedule;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes);

// Writes to a temporary file next to path and renames it into place.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace ncm

#endif  // NCM_CHECKPOINT_H_
