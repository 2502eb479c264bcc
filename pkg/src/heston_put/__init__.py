"""American puts under the Heston model: PDE and Monte Carlo pricing, boundary extraction, verification."""
