"""Salient-object detection on binary spike streams.

Subpackages and modules:

* ``spikeio``   spike stream container, binary codec, intensity representations
* ``simcam``    integrate-and-fire camera model and synthetic scene generator
* ``grad``      numpy-backed reverse-mode autodiff engine
* ``neuro``     leaky integrate-and-fire neurons and conv-BN-spike blocks
* ``rst``       recurrent spiking transformer for saliency prediction
* ``objective`` training losses
* ``metrics``   saliency quality metrics and energy estimation
* ``cli``       command line entry points
"""

__version__ = "0.1.0"
