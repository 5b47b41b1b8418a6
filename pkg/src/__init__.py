# impakt: hedging under permanent price impact
