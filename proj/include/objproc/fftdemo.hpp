#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "objproc/distarray.hpp"
#include "objproc/runtime.hpp"

// Desk-scale distributed 3D Fourier transform over a distributed array: a
// group of worker objects, each transforming its share of 1D lines per axis
// pass, with barriers between passes.

namespace objproc::fftdemo {

using Complex = std::complex<double>;

// Unnormalized radix-2 transform, in place. sign -1 is the forward transform;
// the inverse is sign +1 followed by division by the length (the 3D driver
// applies that on its final inverse pass).
void fft1d(int sign, std::span<Complex> v);

// Direct O(n^2) evaluation of the same transform; the verification oracle.
std::vector<Complex> dft1d_oracle(int sign, std::span<const Complex> v);

// Complex grid of n1 x n2 x n3 elements, stored in a distributed array of
// extents (2*n1, n2, n3): real parts in rows [0, n1), imaginary parts in rows
// [n1, 2*n1). All extents must be powers of two.
struct GridSpec {
    std::int64_t n1 = 0, n2 = 0, n3 = 0;

    std::int64_t elements() const noexcept { return n1 * n2 * n3; }
};

GridSpec grid_from_array(const distarray::ArraySpec& spec);

std::vector<double> complex_to_planes(std::span<const Complex> grid, const GridSpec& g);
std::vector<Complex> planes_to_complex(std::span<const double> planes, const GridSpec& g);

void write_complex_grid(distarray::Array& array, std::span<const Complex> grid);
std::vector<Complex> read_complex_grid(distarray::Array& array);

// Master-side handle to a group of FftWorker objects.
class FftGroup {
public:
    // Spawns `n_workers` workers, round-robin over `machines`, then publishes
    // the member list and has every worker deep-copy it (the list holder is
    // destroyed afterwards; the copies keep working).
    static FftGroup create(runtime::Client& client, const std::vector<std::uint32_t>& machines,
                           int n_workers);

    // Full 3D transform of the array behind `meta`: pass over axis 3, barrier,
    // axis 2, barrier, axis 1, final barrier. sign +1 additionally divides by
    // the element count on the final pass, so forward-then-inverse restores
    // the input.
    void transform(int sign, const runtime::RemoteRef& meta);

    // Every member's deep-copied group list (for consistency checks).
    std::vector<std::vector<wire::Ref>> probe_groups();

    // Adds 1.0 to every element of every line a worker owns on one axis; with
    // all workers participating, a correct partition leaves every array
    // element exactly 1 above its old value.
    void mark_lines(int axis, const runtime::RemoteRef& meta);

    void destroy();

    const std::vector<runtime::RemoteRef>& members() const noexcept { return members_; }

private:
    FftGroup(runtime::Client& client, std::vector<runtime::RemoteRef> members)
        : client_(&client), members_(std::move(members)) {}

    runtime::Client* client_;
    std::vector<runtime::RemoteRef> members_;
};

// Class "FftWorker".
void register_fftdemo_classes(runtime::ClassRegistry& reg);

} // namespace objproc::fftdemo
