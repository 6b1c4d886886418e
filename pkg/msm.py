#!/usr/bin/env python3
# Copyright 2026 The Semi-MSM authors
#
# This file is part of Semi-MSM.
#
# Semi-MSM is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# Semi-MSM is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with Semi-MSM.  If not, see <https://www.gnu.org/licenses/>.

import sys

from semi_msm.cli import MsmCommand

sys.exit(MsmCommand().run(sys.argv[1:]))
