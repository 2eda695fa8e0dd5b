//! Experiment drivers: quench accuracy, runtime benchmark, pulsed pumping.
