"""Tests for farthest-point seeding, relaxation and grid seeds."""

import numpy as np
import pytest

from conftest import brute_force_seeds, random_connected_mask
from utils.errors import InvalidParams, TooManySeeds
from utils.seeding_utils import (
    nearest_seed,
    place_seeds,
    relax_seeds,
    seed_grid,
    seeds_in_mask,
    snap_to_mask,
)
from utils.volume_utils import Mask, SeedSet


class TestPlaceSeeds:
    def test_first_seed_is_deepest_voxel(self, square_mask):
        seeds, distances = place_seeds(square_mask, 1, return_distances=True)
        assert seeds.points.tolist() == [[4.0, 4.0]]
        assert distances == [3.0]

    @pytest.mark.parametrize("n", [1, 3, 8])
    def test_matches_recomputed_reference(self, rng, n):
        mask = random_connected_mask(rng, (20, 20))
        seeds = place_seeds(mask, n)
        expected = brute_force_seeds(mask, n)
        assert [tuple(int(c) for c in p) for p in seeds.points] == expected

    def test_seeds_are_distinct_mask_voxels(self, rng):
        mask = random_connected_mask(rng, (12, 12, 10))
        seeds = place_seeds(mask, 25)
        seeds.validate_for(mask)
        assert seeds.count == 25

    def test_distances_do_not_increase(self, disk_mask):
        _, distances = place_seeds(disk_mask, 20, return_distances=True)
        assert all(a >= b for a, b in zip(distances, distances[1:]))

    def test_every_voxel_can_be_a_seed(self):
        bits = np.zeros((5, 5), dtype=bool)
        bits[1, 1:4] = True
        seeds = place_seeds(Mask(bits), 3)
        assert sorted(map(tuple, seeds.voxels().tolist())) == [(1, 1), (1, 2), (1, 3)]

    def test_too_many_seeds(self, square_mask):
        with pytest.raises(TooManySeeds):
            place_seeds(square_mask, 37)

    def test_zero_seeds_rejected(self, square_mask):
        with pytest.raises(InvalidParams):
            place_seeds(square_mask, 0)


class TestNearestSeed:
    def test_ties_go_to_lowest_index(self):
        coords = np.array([[0.0, 1.0]])
        centers = np.array([[0.0, 0.0], [0.0, 2.0]])
        labels, best = nearest_seed(coords, centers, (1.0, 1.0))
        assert labels.tolist() == [0]
        assert best.tolist() == [1.0]

    def test_spacing_scales_distance(self):
        coords = np.array([[1.0, 1.0]])
        centers = np.array([[0.0, 1.0], [1.0, 0.0]])
        labels, best = nearest_seed(coords, centers, (3.0, 1.0))
        assert labels.tolist() == [1]
        assert best.tolist() == [1.0]


class TestSnapToMask:
    def test_snaps_to_first_nearest_voxel(self, square_mask):
        snapped = snap_to_mask(np.array([[4.5, 4.5]]), square_mask, (1.0, 1.0))
        assert snapped.tolist() == [[4, 4]]

    def test_outside_point_moves_inside(self, square_mask):
        snapped = snap_to_mask(np.array([[0.0, 5.0]]), square_mask, (1.0, 1.0))
        assert snapped.tolist() == [[2, 5]]

    def test_keeps_voxels_distinct(self, square_mask):
        snapped = snap_to_mask(np.array([[3.0, 3.0], [3.1, 3.0]]), square_mask, (1.0, 1.0))
        assert snapped[0].tolist() == [3, 3]
        assert snapped[1].tolist() != [3, 3]


class TestRelaxSeeds:
    def test_square_relaxes_to_quadrant_centres(self, square_mask):
        seeds = relax_seeds(square_mask, place_seeds(square_mask, 4))
        centres = sorted(map(tuple, seeds.voxels().tolist()))
        assert centres == [(3, 3), (3, 6), (6, 3), (6, 6)]

    def test_relaxed_seeds_stay_in_mask(self, rng):
        mask = random_connected_mask(rng, (24, 24), fill=0.4)
        seeds = relax_seeds(mask, place_seeds(mask, 12))
        seeds.validate_for(mask)
        assert seeds.count == 12

    def test_relaxation_is_translation_equivariant(self, disk_mask):
        from utils.volume_utils import translate_mask

        moved = translate_mask(disk_mask, (-2, 3))
        original = relax_seeds(disk_mask, place_seeds(disk_mask, 9))
        shifted = relax_seeds(moved, place_seeds(moved, 9))
        np.testing.assert_array_equal(shifted.points, original.points + np.array([-2, 3]))


class TestSeedGrid:
    def test_four_seeds_on_square_grid(self):
        seeds = seed_grid((20, 20), 4)
        assert sorted(map(tuple, seeds.voxels().tolist())) == [(5, 5), (5, 15), (15, 5), (15, 15)]

    def test_single_seed_is_centred(self):
        assert seed_grid((10, 10), 1).points.tolist() == [[5.0, 5.0]]

    def test_spacing_changes_axis_counts(self):
        seeds = seed_grid((20, 20), 8, spacing=(2.0, 1.0))
        rows = np.unique(seeds.points[:, 0]).size
        cols = np.unique(seeds.points[:, 1]).size
        assert rows == 4
        assert cols == 2

    def test_3d_grid(self):
        seeds = seed_grid((8, 8, 8), 8)
        assert seeds.count == 8
        assert set(seeds.points.ravel().tolist()) == {2.0, 6.0}

    def test_rejects_zero(self):
        with pytest.raises(InvalidParams):
            seed_grid((10, 10), 0)


class TestSeedsInMask:
    def test_filters_outside_seeds(self, square_mask):
        seeds = SeedSet(np.array([[0.0, 0.0], [3.0, 3.0], [12.0, 3.0]]))
        assert seeds_in_mask(seeds, square_mask).points.tolist() == [[3.0, 3.0]]

    def test_may_be_empty(self):
        bits = np.zeros((20, 20), dtype=bool)
        bits[8:12, 8:12] = True
        kept = seeds_in_mask(seed_grid((20, 20), 4), Mask(bits))
        assert kept.count == 0
