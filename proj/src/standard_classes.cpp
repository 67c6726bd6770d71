#include "objproc/distarray.hpp"
#include "objproc/fftdemo.hpp"
#include "objproc/pagestore.hpp"
#include "objproc/runtime.hpp"

namespace objproc::runtime {

std::shared_ptr<ClassRegistry> standard_classes() {
    auto reg = std::make_shared<ClassRegistry>();
    register_builtin_classes(*reg);
    pagestore::register_pagestore_classes(*reg);
    distarray::register_distarray_classes(*reg);
    fftdemo::register_fftdemo_classes(*reg);
    return reg;
}

} // namespace objproc::runtime
