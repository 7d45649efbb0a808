#include "gnf/field_model.hpp"

#include "gnf/numerics.hpp"

namespace gnf {

std::string to_string(Task task) {
  switch (task) {
    case Task::sdf:
      return "sdf";
    case Task::image:
      return "image";
    case Task::radiance:
      return "radiance";
  }
  throw ContractError("unknown task");
}

Task task_from_string(const std::string& name) {
  if (name == "sdf") return Task::sdf;
  if (name == "image") return Task::image;
  if (name == "radiance") return Task::radiance;
  throw ContractError("unknown task '" + name + "'");
}

}  // namespace gnf
