# Vehicle Search API
